//! Dense full-precision tensors laid out as (electrodes, time, maps).
//!
//! Storage is row-major with the feature-map axis innermost, so a run of
//! consecutive time steps for one electrode is a single contiguous slice.
//! Time-axis convolutions read their whole receptive field from one slice.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of the dense data path.
///
/// The network runs in `f32`; `f64` instantiations exist so gradient checks
/// can use central differences without drowning in rounding noise.
pub trait Real: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Extents of a tensor: electrodes × time × feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub electrodes: usize,
    pub time: usize,
    pub maps: usize,
}

impl Shape {
    pub const fn new(electrodes: usize, time: usize, maps: usize) -> Self {
        Shape {
            electrodes,
            time,
            maps,
        }
    }

    pub fn len(&self) -> usize {
        self.electrodes * self.time * self.maps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<usize> {
        if self.electrodes == 0 || self.time == 0 || self.maps == 0 {
            return Err(Error::InvalidShape(format!(
                "all extents must be >= 1, got {self}"
            )));
        }
        self.electrodes
            .checked_mul(self.time)
            .and_then(|n| n.checked_mul(self.maps))
            .ok_or_else(|| Error::InvalidShape(format!("{self} exceeds addressable size")))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.electrodes, self.time, self.maps)
    }
}

/// Spatial axes a reduction may collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Electrode,
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> DenseTensor<T> {
    pub fn create(shape: Shape, fill: T) -> Result<Self> {
        let len = shape.validate()?;
        if !fill.is_finite() {
            return Err(Error::InvalidValue("fill value must be finite".into()));
        }
        Ok(DenseTensor {
            shape,
            data: vec![fill; len],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::create(shape, T::zero())
    }

    /// Wraps existing row-major data, rejecting wrong lengths and non-finite values.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len = shape.validate()?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape} needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value at index {i}")));
        }
        Ok(DenseTensor { shape, data })
    }

    /// Internal constructor for kernels that already guarantee the invariants.
    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, e: usize, t: usize, m: usize) -> usize {
        (e * self.shape.time + t) * self.shape.maps + m
    }

    #[inline]
    pub fn get(&self, e: usize, t: usize, m: usize) -> T {
        self.data[self.index(e, t, m)]
    }

    /// Overwrites one element. Non-finite values are rejected.
    pub fn set(&mut self, e: usize, t: usize, m: usize, value: T) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidValue("tensor values must be finite".into()));
        }
        let i = self.index(e, t, m);
        self.data[i] = value;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Arithmetic mean over the given axes; reduced axes keep extent 1.
    pub fn mean_over(&self, axes: &[Axis]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidShape("mean_over needs at least one axis".into()));
        }
        let over_e = axes.contains(&Axis::Electrode);
        let over_t = axes.contains(&Axis::Time);
        let Shape {
            electrodes,
            time,
            maps,
        } = self.shape;
        let out_shape = Shape::new(
            if over_e { 1 } else { electrodes },
            if over_t { 1 } else { time },
            maps,
        );
        let mut acc = vec![0.0f64; out_shape.len()];
        for e in 0..electrodes {
            let oe = if over_e { 0 } else { e };
            for t in 0..time {
                let ot = if over_t { 0 } else { t };
                let src = &self.data[(e * time + t) * maps..][..maps];
                let dst = &mut acc[(oe * out_shape.time + ot) * maps..][..maps];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s.as_f64();
                }
            }
        }
        let count = (if over_e { electrodes } else { 1 } * if over_t { time } else { 1 }) as f64;
        Ok(DenseTensor {
            shape: out_shape,
            data: acc.into_iter().map(|s| T::of(s / count)).collect(),
        })
    }
}
