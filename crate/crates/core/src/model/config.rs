use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ConvAxis, DenseActivation, Extent2, Precision};
use crate::tensor::Shape;

pub const BLOCK_COUNT: usize = 5;
pub const CLASS_COUNT: usize = 2;

/// Kernel shape of the time blocks and of the electrode blocks: `1d` keeps a
/// kernel along its block axis only, `2d` makes it `k×k` over both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ConvMode {
    #[default]
    #[serde(rename = "1d-1d")]
    OneOne,
    #[serde(rename = "1d-2d")]
    OneTwo,
    #[serde(rename = "2d-1d")]
    TwoOne,
    #[serde(rename = "2d-2d")]
    TwoTwo,
}

impl ConvMode {
    pub const ALL: [ConvMode; 4] = [ConvMode::OneOne, ConvMode::OneTwo, ConvMode::TwoOne, ConvMode::TwoTwo];

    fn two_d(self, axis: ConvAxis) -> bool {
        match axis {
            ConvAxis::Time => matches!(self, ConvMode::TwoOne | ConvMode::TwoTwo),
            ConvAxis::Electrode => matches!(self, ConvMode::OneTwo | ConvMode::TwoTwo),
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvMode::OneOne => "1d-1d",
            ConvMode::OneTwo => "1d-2d",
            ConvMode::TwoOne => "2d-1d",
            ConvMode::TwoTwo => "2d-2d",
        })
    }
}

impl FromStr for ConvMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown conv mode {s:?} (expected 1d-1d, 1d-2d, 2d-1d or 2d-2d)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    #[default]
    GlobalMeanPool,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub maps: usize,
    pub kernel: usize,
    pub axis: ConvAxis,
    /// Stride of the block's second (strided) convolution along `axis`.
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_shape: Shape,
    pub conv_mode: ConvMode,
    pub blocks: Vec<BlockSpec>,
    pub head: Head,
    pub fc_dims: Vec<usize>,
    /// Shrink electrode-axis kernel extents that exceed the electrodes left
    /// at that depth instead of rejecting the configuration.
    pub clamp_electrode_kernels: bool,
    pub bn_eps: f32,
    pub bn_momentum: f32,
}

/// What follows batch norm in a conv unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitActivation {
    Relu,
    Sign,
}

/// One convolution + batch norm + activation unit after shape resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvUnitPlan {
    pub name: String,
    pub kernel: Extent2,
    pub stride: Extent2,
    pub in_maps: usize,
    pub out_maps: usize,
    pub precision: Precision,
    pub activation: UnitActivation,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensePlan {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: DenseActivation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPlan {
    pub convs: Vec<ConvUnitPlan>,
    pub dense: Vec<DensePlan>,
}

impl LayerPlan {
    pub fn conv_output(&self) -> Shape {
        self.convs.last().expect("plan has conv units").output
    }
}

impl ModelConfig {
    /// Default architecture for an `(E, T, 1)` input.
    pub fn for_input(electrodes: usize, time: usize) -> Self {
        let block = |maps, kernel, axis, stride| BlockSpec {
            maps,
            kernel,
            axis,
            stride,
        };
        ModelConfig {
            input_shape: Shape::new(electrodes, time, 1),
            conv_mode: ConvMode::OneOne,
            blocks: vec![
                block(16, 5, ConvAxis::Time, 4),
                block(32, 5, ConvAxis::Time, 4),
                block(64, 10, ConvAxis::Time, 4),
                block(128, 2, ConvAxis::Electrode, 2),
                block(256, 2, ConvAxis::Electrode, 2),
            ],
            head: Head::GlobalMeanPool,
            fc_dims: vec![256, 64, CLASS_COUNT],
            clamp_electrode_kernels: true,
            bn_eps: 1e-3,
            bn_momentum: 0.9,
        }
    }

    /// 16 electrodes × 20 s at 400 Hz.
    pub fn aes() -> Self {
        Self::for_input(16, 8000)
    }

    /// 23 electrodes × 20 s at 256 Hz.
    pub fn chbmit() -> Self {
        Self::for_input(23, 5120)
    }

    pub fn with_conv_mode(mut self, mode: ConvMode) -> Self {
        self.conv_mode = mode;
        self
    }

    /// Validates the configuration and resolves every layer's shapes.
    pub fn plan(&self) -> Result<LayerPlan> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let input = self.input_shape;
        if input.electrodes == 0 || input.time == 0 || input.maps != 1 {
            return bad(format!("input shape must be (E>=1, T>=1, 1), got {input}"));
        }
        if self.blocks.len() != BLOCK_COUNT {
            return bad(format!("expected {BLOCK_COUNT} conv blocks, got {}", self.blocks.len()));
        }
        if self.fc_dims.last() != Some(&CLASS_COUNT) {
            return bad(format!("last dense layer must have {CLASS_COUNT} outputs"));
        }
        if self.fc_dims.contains(&0) {
            return bad("dense layer sizes must be >= 1".into());
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return bad("batch norm epsilon must be a positive finite number".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("batch norm momentum must be in [0, 1]".into());
        }

        let mut convs = Vec::with_capacity(2 * BLOCK_COUNT);
        let mut shape = input;
        for (b, spec) in self.blocks.iter().enumerate() {
            if spec.maps == 0 || spec.kernel == 0 || spec.stride == 0 {
                return bad(format!("block {} has a zero map count, kernel or stride", b + 1));
            }
            let (precision, names) = if b == 0 {
                (Precision::Full, ["Conv1".to_string(), "SConv1".to_string()])
            } else {
                (Precision::Binary, [format!("BConv{b}"), format!("BSConv{b}")])
            };
            for (j, name) in names.into_iter().enumerate() {
                let kernel = self.kernel_for(spec, shape, &name)?;
                let stride = Extent2::along(spec.axis, if j == 0 { 1 } else { spec.stride });
                if shape.electrodes < kernel.electrodes || shape.time < kernel.time {
                    return bad(format!(
                        "{name}: input {shape} is smaller than its {}x{} kernel",
                        kernel.electrodes, kernel.time
                    ));
                }
                let output = Shape::new(
                    (shape.electrodes - kernel.electrodes) / stride.electrodes + 1,
                    (shape.time - kernel.time) / stride.time + 1,
                    spec.maps,
                );
                convs.push(ConvUnitPlan {
                    name,
                    kernel,
                    stride,
                    in_maps: shape.maps,
                    out_maps: spec.maps,
                    precision,
                    activation: if b == 0 && j == 0 {
                        UnitActivation::Relu
                    } else {
                        UnitActivation::Sign
                    },
                    input: shape,
                    output,
                });
                shape = output;
            }
        }

        let mut in_dim = match self.head {
            Head::GlobalMeanPool => shape.maps,
            Head::Flatten => shape.len(),
        };
        let dense = self
            .fc_dims
            .iter()
            .enumerate()
            .map(|(i, &out_dim)| {
                let plan = DensePlan {
                    name: format!("FC{}", i + 1),
                    in_dim,
                    out_dim,
                    activation: if i + 1 == self.fc_dims.len() {
                        DenseActivation::Softmax
                    } else {
                        DenseActivation::Sigmoid
                    },
                };
                in_dim = out_dim;
                plan
            })
            .collect();
        Ok(LayerPlan { convs, dense })
    }

    fn kernel_for(&self, spec: &BlockSpec, shape: Shape, name: &str) -> Result<Extent2> {
        let mut kernel = if self.conv_mode.two_d(spec.axis) {
            Extent2::new(spec.kernel, spec.kernel)
        } else {
            Extent2::along(spec.axis, spec.kernel)
        };
        if kernel.electrodes > shape.electrodes {
            if !self.clamp_electrode_kernels {
                return Err(Error::InvalidConfig(format!(
                    "{name}: electrode kernel {} exceeds the {} electrodes left",
                    kernel.electrodes, shape.electrodes
                )));
            }
            kernel.electrodes = shape.electrodes;
        }
        Ok(kernel)
    }
}
