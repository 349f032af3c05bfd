use crate::error::{Error, Result};
use crate::tensor::Real;

use super::dot;

/// Activation applied after a dense layer by the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenseActivation {
    Sigmoid,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Real = f32> {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `[out][in]`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: DenseActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Vec<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(in_dim: usize, out_dim: usize, activation: DenseActivation) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("dense dimensions must be >= 1".into()));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Pre-activation output `W·x + b`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect())
    }

    /// Gradients given the upstream gradient of the pre-activation output.
    pub fn backward(&self, x: &[T], upstream: &[T]) -> Result<DenseGrads<T>> {
        if x.len() != self.in_dim || upstream.len() != self.out_dim {
            return Err(Error::ShapeMismatch(format!(
                "dense backward expects ({}, {}), got ({}, {})",
                self.in_dim,
                self.out_dim,
                x.len(),
                upstream.len()
            )));
        }
        let mut input = vec![T::zero(); self.in_dim];
        let mut weights = vec![T::zero(); self.weights.len()];
        for (o, &g) in upstream.iter().enumerate() {
            let row = &self.weights[o * self.in_dim..][..self.in_dim];
            let grow = &mut weights[o * self.in_dim..][..self.in_dim];
            for i in 0..self.in_dim {
                input[i] = input[i] + g * row[i];
                grow[i] = g * x[i];
            }
        }
        Ok(DenseGrads {
            input,
            weights,
            bias: upstream.to_vec(),
        })
    }
}
