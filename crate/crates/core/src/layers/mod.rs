//! Forward and backward passes for every layer kind in the network.

mod activation;
mod batchnorm;
mod conv;
mod dense;

pub use activation::{
    cross_entropy, cross_entropy_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    softmax, softmax_backward, softmax_cross_entropy_backward,
};
pub use batchnorm::{BatchNorm, BnCache, BnGrads, ThresholdRule};
pub use conv::{BitRows, ConvAxis, ConvGrads, ConvLayer, Extent2, Precision};
pub use dense::{DenseActivation, DenseGrads, DenseLayer};

use crate::tensor::Real;

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Dot product with eight independent partial sums so LLVM can vectorize it.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// y += alpha · x
#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}
