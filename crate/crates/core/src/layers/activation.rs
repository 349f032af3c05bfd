use crate::error::{Error, Result};
use crate::tensor::Real;

pub fn relu<T: Real>(x: T) -> T {
    x.max(T::zero())
}

/// Gradient of ReLU; the kink at 0 takes the zero branch.
pub fn relu_backward<T: Real>(upstream: T, x: T) -> T {
    if x > T::zero() {
        upstream
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradient of sigmoid expressed through its output `y`.
pub fn sigmoid_backward<T: Real>(upstream: T, y: T) -> T {
    upstream * y * (T::one() - y)
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Vector-Jacobian product of softmax given its output `p`.
pub fn softmax_backward<T: Real>(p: &[T], upstream: &[T]) -> Vec<T> {
    let inner: T = p.iter().zip(upstream).map(|(&a, &b)| a * b).sum();
    p.iter().zip(upstream).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

/// `-ln p[class]`.
pub fn cross_entropy<T: Real>(p: &[T], class: usize) -> Result<T> {
    let pc = *p
        .get(class)
        .ok_or_else(|| Error::ShapeMismatch(format!("class {class} out of range for {} outputs", p.len())))?;
    Ok(-pc.max(T::min_positive_value()).ln())
}

pub fn cross_entropy_backward<T: Real>(p: &[T], class: usize) -> Result<Vec<T>> {
    if class >= p.len() {
        return Err(Error::ShapeMismatch(format!("class {class} out of range")));
    }
    Ok(p.iter()
        .enumerate()
        .map(|(i, &pi)| {
            if i == class {
                -T::one() / pi.max(T::min_positive_value())
            } else {
                T::zero()
            }
        })
        .collect())
}

/// Gradient of `cross_entropy(softmax(z), class)` with respect to `z`: `p − onehot`.
pub fn softmax_cross_entropy_backward<T: Real>(p: &[T], class: usize) -> Result<Vec<T>> {
    if class >= p.len() {
        return Err(Error::ShapeMismatch(format!("class {class} out of range")));
    }
    Ok(p.iter()
        .enumerate()
        .map(|(i, &pi)| if i == class { pi - T::one() } else { pi })
        .collect())
}
