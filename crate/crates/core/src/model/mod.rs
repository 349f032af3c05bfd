//! The network: configuration, training passes, inference backends,
//! resource accounting and the model file format.

mod config;
mod inference;
mod io;
mod network;
mod resources;

pub use config::{
    BlockSpec, ConvMode, ConvUnitPlan, DensePlan, Head, LayerPlan, ModelConfig, UnitActivation, BLOCK_COUNT,
    CLASS_COUNT,
};
pub use inference::{Backend, InferenceEngine, UnitOutput};
pub use io::{FORMAT_VERSION, MAGIC};
pub use network::{BatchResult, Model, ParamGroup};
pub use resources::{
    LayerKind, LayerResources, ResourceReport, ResourceTotals, Scope, BINARY_OP_COST, FULL_BITS, FULL_MAC_COST,
};
