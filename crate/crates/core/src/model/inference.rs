use std::fmt;
use std::str::FromStr;

use crate::binary::sign;
use crate::error::{Error, Result};
use crate::layers::{relu, BitRows, Precision, ThresholdRule};
use crate::tensor::DenseTensor;

use super::config::{Head, UnitActivation};
use super::network::Model;

/// How the binary part of the network is evaluated at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Backend {
    /// Packed activations, XNOR-popcount convolutions, and batch norm + sign
    /// folded into one threshold comparison per map.
    #[default]
    Packed,
    /// Packed activations and XNOR-popcount convolutions, with batch norm
    /// evaluated arithmetically before the sign.
    Arithmetic,
    /// Everything in floating point; binary convolutions multiply ±1 floats.
    Naive,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Packed => "packed",
            Backend::Arithmetic => "arithmetic",
            Backend::Naive => "naive",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "packed" => Ok(Backend::Packed),
            "arithmetic" => Ok(Backend::Arithmetic),
            "naive" => Ok(Backend::Naive),
            _ => Err(Error::InvalidConfig(format!("unknown backend {s:?}"))),
        }
    }
}

/// Output of one conv unit after its activation.
#[derive(Debug, Clone, PartialEq)]
pub enum UnitOutput {
    Dense(DenseTensor),
    Bits(BitRows),
}

impl UnitOutput {
    /// The activation as a dense tensor (±1 for sign units).
    pub fn to_tensor(&self) -> DenseTensor {
        match self {
            UnitOutput::Dense(t) => t.clone(),
            UnitOutput::Bits(b) => b.to_tensor(),
        }
    }
}

/// A frozen model plus the threshold rules folded from its batch norms.
#[derive(Debug, Clone)]
pub struct InferenceEngine {
    model: Model,
    rules: Vec<Vec<ThresholdRule>>,
}

impl InferenceEngine {
    pub fn new(model: Model) -> Self {
        let rules = model.bns.iter().map(|bn| bn.fold_sign()).collect();
        InferenceEngine { model, rules }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Folded rules of conv unit `i`.
    pub fn rules(&self, i: usize) -> &[ThresholdRule] {
        &self.rules[i]
    }

    pub fn forward(&self, window: &DenseTensor, backend: Backend) -> Result<[f32; 2]> {
        let outputs = self.activations(window, backend)?;
        let last = outputs.last().expect("model has conv units");
        let features = match (last, self.model.config.head) {
            (UnitOutput::Bits(bits), Head::GlobalMeanPool) => {
                let s = bits.shape();
                let n = (s.electrodes * s.time) as f64;
                bits.count_ones_per_map()
                    .into_iter()
                    .map(|ones| ((2 * ones) as f64 - n) / n)
                    .map(|v| v as f32)
                    .collect()
            }
            (out, _) => self.model.features(&out.to_tensor())?,
        };
        self.model.dense_forward(features)
    }

    pub fn predict_scores(&self, windows: &[DenseTensor], backend: Backend) -> Result<Vec<f32>> {
        windows.iter().map(|w| Ok(self.forward(w, backend)?[1])).collect()
    }

    /// Activated output of every conv unit, in order.
    pub fn activations(&self, window: &DenseTensor, backend: Backend) -> Result<Vec<UnitOutput>> {
        self.model.check_input(window)?;
        let m = &self.model;
        let mut outputs: Vec<UnitOutput> = Vec::with_capacity(m.convs.len());
        for (i, unit) in m.plan.convs.iter().enumerate() {
            let conv = &m.convs[i];
            let bn = &m.bns[i];
            let input = outputs.last();
            let pre: DenseTensor = match (backend, conv.precision(), input) {
                (Backend::Naive, _, Some(x)) => conv.forward_naive(&x.to_tensor())?,
                (_, Precision::Binary, Some(UnitOutput::Bits(bits))) => {
                    let shape = conv.output_shape(bits.shape())?;
                    let mut out = vec![0.0f32; shape.len()];
                    conv.xnor_conv(bits, |j, d| out[j] = d as f32);
                    DenseTensor::from_raw(shape, out)
                }
                (_, _, Some(x)) => conv.forward(&x.to_tensor())?,
                (_, _, None) => match backend {
                    Backend::Naive => conv.forward_naive(window)?,
                    _ => conv.forward(window)?,
                },
            };
            let out = match (unit.activation, backend) {
                (UnitActivation::Relu, _) => UnitOutput::Dense(bn.forward_infer(&pre)?.map(relu)),
                (UnitActivation::Sign, Backend::Packed) => {
                    let rules = &self.rules[i];
                    let s = pre.shape();
                    let v = pre.data();
                    UnitOutput::Bits(BitRows::from_fn(s, |e, t, c| {
                        rules[c].fires(v[(e * s.time + t) * s.maps + c])
                    }))
                }
                (UnitActivation::Sign, Backend::Arithmetic) => {
                    UnitOutput::Bits(BitRows::from_signs(&bn.forward_infer(&pre)?))
                }
                (UnitActivation::Sign, Backend::Naive) => UnitOutput::Dense(bn.forward_infer(&pre)?.map(sign)),
            };
            outputs.push(out);
        }
        Ok(outputs)
    }
}
