//! Valid (unpadded) convolution over the electrode and time axes.
//!
//! A kernel spans `ke` electrodes × `kt` time steps × all input maps. The 1D
//! layers of the network are the special cases `ke = 1` (time convolution)
//! and `kt = 1` (electrode convolution). Weights are stored per output map
//! in the same order as the input window is flattened: `[out][ke][kt][in]`.
//! For one (electrode, output position) pair the `kt × in` slice of the
//! input is contiguous, which every kernel below relies on.

use serde::{Deserialize, Serialize};

use crate::binary::{copy_bits, pack_signs_into, sign, ste_backward, words_for, xnor_dot_words};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Real, Shape};

use super::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Full,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvAxis {
    Time,
    Electrode,
}

/// A pair of extents along (electrode, time); used for kernels and strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Extent2 {
    pub electrodes: usize,
    pub time: usize,
}

impl Extent2 {
    pub const fn new(electrodes: usize, time: usize) -> Self {
        Extent2 { electrodes, time }
    }

    /// Extent `k` along `axis`, 1 along the other.
    pub const fn along(axis: ConvAxis, k: usize) -> Self {
        match axis {
            ConvAxis::Time => Extent2::new(1, k),
            ConvAxis::Electrode => Extent2::new(k, 1),
        }
    }
}

/// A ±1 tensor packed one electrode row at a time. Row `e` holds `T·M`
/// bits, bit `t·M + m` encoding element `(e, t, m)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitRows {
    shape: Shape,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitRows {
    /// Packs a tensor whose values must all be exactly ±1.
    pub fn from_tensor<T: Real>(x: &DenseTensor<T>) -> Result<Self> {
        if let Some(i) = x
            .data()
            .iter()
            .position(|&v| v != T::one() && v != -T::one())
        {
            return Err(Error::InvalidValue(format!(
                "binary layer input must be ±1, found {:?} at index {i}",
                x.data()[i]
            )));
        }
        Ok(Self::from_signs(x))
    }

    /// Packs the signs of an arbitrary finite tensor.
    pub fn from_signs<T: Real>(x: &DenseTensor<T>) -> Self {
        let shape = x.shape();
        let row_len = shape.time * shape.maps;
        let words_per_row = words_for(row_len);
        let mut words = vec![0u64; words_per_row * shape.electrodes];
        for (row, dst) in x
            .data()
            .chunks_exact(row_len)
            .zip(words.chunks_exact_mut(words_per_row))
        {
            pack_signs_into(row, dst);
        }
        BitRows {
            shape,
            words_per_row,
            words,
        }
    }

    /// Builds rows from a per-element predicate (true ↔ +1).
    pub(crate) fn from_fn(shape: Shape, mut bit: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let row_len = shape.time * shape.maps;
        let words_per_row = words_for(row_len);
        let mut words = vec![0u64; words_per_row * shape.electrodes];
        for e in 0..shape.electrodes {
            let row = &mut words[e * words_per_row..][..words_per_row];
            for t in 0..shape.time {
                for m in 0..shape.maps {
                    if bit(e, t, m) {
                        let i = t * shape.maps + m;
                        row[i / 64] |= 1 << (i % 64);
                    }
                }
            }
        }
        BitRows {
            shape,
            words_per_row,
            words,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn row(&self, e: usize) -> &[u64] {
        &self.words[e * self.words_per_row..][..self.words_per_row]
    }

    #[inline]
    pub fn get(&self, e: usize, t: usize, m: usize) -> bool {
        let i = t * self.shape.maps + m;
        self.row(e)[i / 64] >> (i % 64) & 1 == 1
    }

    /// Number of +1 entries per map.
    pub fn count_ones_per_map(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.shape.maps];
        for e in 0..self.shape.electrodes {
            for t in 0..self.shape.time {
                for (m, c) in counts.iter_mut().enumerate() {
                    *c += self.get(e, t, m) as usize;
                }
            }
        }
        counts
    }

    pub fn to_tensor<T: Real>(&self) -> DenseTensor<T> {
        let s = self.shape;
        let mut data = Vec::with_capacity(s.len());
        for e in 0..s.electrodes {
            for t in 0..s.time {
                for m in 0..s.maps {
                    data.push(if self.get(e, t, m) { T::one() } else { -T::one() });
                }
            }
        }
        DenseTensor::from_raw(s, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: DenseTensor<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Real = f32> {
    kernel: Extent2,
    stride: Extent2,
    in_maps: usize,
    out_maps: usize,
    precision: Precision,
    weights: Vec<T>,
    bias: Option<Vec<T>>,
    /// Binary layers: sign(weights) as ±1 scalars, used by the backward pass.
    signs: Vec<T>,
    /// Binary layers: packed sign(weights), `words_per_filter` words per output map.
    packed: Vec<u64>,
}

impl<T: Real> ConvLayer<T> {
    /// Creates a layer with all-zero weights (and zero bias when full precision).
    pub fn new(
        kernel: Extent2,
        stride: Extent2,
        in_maps: usize,
        out_maps: usize,
        precision: Precision,
    ) -> Result<Self> {
        if kernel.electrodes == 0
            || kernel.time == 0
            || stride.electrodes == 0
            || stride.time == 0
            || in_maps == 0
            || out_maps == 0
        {
            return Err(Error::InvalidConfig(format!(
                "conv extents must be >= 1 (kernel {kernel:?}, stride {stride:?}, maps {in_maps}->{out_maps})"
            )));
        }
        let n = out_maps * kernel.electrodes * kernel.time * in_maps;
        let mut layer = ConvLayer {
            kernel,
            stride,
            in_maps,
            out_maps,
            precision,
            weights: vec![T::zero(); n],
            bias: (precision == Precision::Full).then(|| vec![T::zero(); out_maps]),
            signs: Vec::new(),
            packed: Vec::new(),
        };
        layer.refresh();
        Ok(layer)
    }

    pub fn new_1d(
        axis: ConvAxis,
        k: usize,
        stride: usize,
        in_maps: usize,
        out_maps: usize,
        precision: Precision,
    ) -> Result<Self> {
        Self::new(
            Extent2::along(axis, k),
            Extent2::along(axis, stride),
            in_maps,
            out_maps,
            precision,
        )
    }

    pub fn kernel(&self) -> Extent2 {
        self.kernel
    }
    pub fn stride(&self) -> Extent2 {
        self.stride
    }
    pub fn in_maps(&self) -> usize {
        self.in_maps
    }
    pub fn out_maps(&self) -> usize {
        self.out_maps
    }
    pub fn precision(&self) -> Precision {
        self.precision
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    /// Number of weights in one output map's filter (`ke·kt·in_maps`).
    pub fn filter_len(&self) -> usize {
        self.kernel.electrodes * self.kernel.time * self.in_maps
    }

    pub fn words_per_filter(&self) -> usize {
        words_for(self.filter_len())
    }

    /// Packed sign bits of output map `o`'s filter (binary layers only).
    pub fn packed_filter(&self, o: usize) -> &[u64] {
        let w = self.words_per_filter();
        &self.packed[o * w..][..w]
    }

    pub(crate) fn packed_words(&self) -> &[u64] {
        &self.packed
    }

    pub fn set_weights(&mut self, weights: Vec<T>) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidValue("weights must be finite".into()));
        }
        self.weights = weights;
        self.refresh();
        Ok(())
    }

    pub fn set_bias(&mut self, bias: Vec<T>) -> Result<()> {
        match &mut self.bias {
            None => Err(Error::InvalidConfig("binary conv layers carry no bias".into())),
            Some(b) if b.len() != bias.len() => Err(Error::ShapeMismatch(format!(
                "expected {} biases, got {}",
                b.len(),
                bias.len()
            ))),
            Some(b) => {
                *b = bias;
                Ok(())
            }
        }
    }

    /// Mutable access to parameters; the binary caches are rebuilt by [`Self::refresh`].
    pub(crate) fn params_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.weights, self.bias.as_deref_mut())
    }

    /// Rebuilds the sign and packed caches from the latent weights.
    pub(crate) fn refresh(&mut self) {
        if self.precision != Precision::Binary {
            return;
        }
        self.signs = self.weights.iter().map(|&w| sign(w)).collect();
        let fl = self.filter_len();
        let fw = words_for(fl);
        self.packed = vec![0u64; fw * self.out_maps];
        for (filter, dst) in self
            .signs
            .chunks_exact(fl)
            .zip(self.packed.chunks_exact_mut(fw))
        {
            pack_signs_into(filter, dst);
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.maps != self.in_maps {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input maps, got {}",
                self.in_maps, input.maps
            )));
        }
        if input.electrodes < self.kernel.electrodes || input.time < self.kernel.time {
            return Err(Error::ShapeMismatch(format!(
                "input {input} smaller than kernel {}x{}",
                self.kernel.electrodes, self.kernel.time
            )));
        }
        Ok(Shape::new(
            (input.electrodes - self.kernel.electrodes) / self.stride.electrodes + 1,
            (input.time - self.kernel.time) / self.stride.time + 1,
            self.out_maps,
        ))
    }

    /// Full-precision layers run the float kernel; binary layers require ±1
    /// input and compute every accumulation with XNOR-popcount.
    pub fn forward(&self, input: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        match self.precision {
            Precision::Full => self.forward_float(input, &self.weights),
            Precision::Binary => {
                let rows = BitRows::from_tensor(input)?;
                let out_shape = self.output_shape(rows.shape())?;
                let mut out = vec![T::zero(); out_shape.len()];
                self.xnor_conv(&rows, |i, d| out[i] = T::of(d as f64));
                Ok(DenseTensor::from_raw(out_shape, out))
            }
        }
    }

    /// Reference path: binary layers multiply ±1 floats instead of using bits.
    pub fn forward_naive(&self, input: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        match self.precision {
            Precision::Full => self.forward_float(input, &self.weights),
            Precision::Binary => {
                BitRows::from_tensor(input)?;
                self.forward_float(input, &self.signs)
            }
        }
    }

    fn forward_float(&self, input: &DenseTensor<T>, weights: &[T]) -> Result<DenseTensor<T>> {
        let in_shape = input.shape();
        let out_shape = self.output_shape(in_shape)?;
        let seg = self.kernel.time * self.in_maps;
        let x = input.data();
        let mut out = vec![T::zero(); out_shape.len()];
        for oe in 0..out_shape.electrodes {
            for ot in 0..out_shape.time {
                let o_base = (oe * out_shape.time + ot) * self.out_maps;
                let dst = &mut out[o_base..o_base + self.out_maps];
                if let Some(b) = &self.bias {
                    dst.copy_from_slice(b);
                }
                for a in 0..self.kernel.electrodes {
                    let e = oe * self.stride.electrodes + a;
                    let start = (e * in_shape.time + ot * self.stride.time) * self.in_maps;
                    let window = &x[start..start + seg];
                    for (o, d) in dst.iter_mut().enumerate() {
                        let w = &weights[(o * self.kernel.electrodes + a) * seg..][..seg];
                        *d = *d + dot(w, window);
                    }
                }
            }
        }
        Ok(DenseTensor::from_raw(out_shape, out))
    }

    /// XNOR-popcount convolution over packed rows; `emit(flat_output_index, dot)`.
    pub(crate) fn xnor_conv(&self, rows: &BitRows, mut emit: impl FnMut(usize, i64)) {
        let in_shape = rows.shape();
        let out_e = (in_shape.electrodes - self.kernel.electrodes) / self.stride.electrodes + 1;
        let out_t = (in_shape.time - self.kernel.time) / self.stride.time + 1;
        let seg = self.kernel.time * self.in_maps;
        let flen = self.filter_len();
        let fw = words_for(flen);
        let mut window = vec![0u64; fw];
        for oe in 0..out_e {
            for ot in 0..out_t {
                window.fill(0);
                for a in 0..self.kernel.electrodes {
                    let row = rows.row(oe * self.stride.electrodes + a);
                    copy_bits(row, ot * self.stride.time * self.in_maps, &mut window, a * seg, seg);
                }
                let base = (oe * out_t + ot) * self.out_maps;
                for (o, filter) in self.packed.chunks_exact(fw).enumerate() {
                    emit(base + o, xnor_dot_words(&window, filter, flen));
                }
            }
        }
    }

    /// Gradients of the convolution. Binary layers treat the binarized weights
    /// as constants in the forward pass and route the weight gradient back to
    /// the latent weights through the straight-through estimator.
    pub fn backward(&self, input: &DenseTensor<T>, upstream: &DenseTensor<T>) -> Result<ConvGrads<T>> {
        let mut input_grad = vec![T::zero(); input.shape().len()];
        let mut weight_grad = vec![T::zero(); self.weights.len()];
        let mut bias_grad = self.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
        self.backward_into(
            input,
            upstream,
            Some(&mut input_grad),
            &mut weight_grad,
            bias_grad.as_deref_mut(),
        )?;
        Ok(ConvGrads {
            input: DenseTensor::from_raw(input.shape(), input_grad),
            weights: weight_grad,
            bias: bias_grad,
        })
    }

    /// Accumulates (`+=`) gradients into caller-owned buffers.
    pub(crate) fn backward_into(
        &self,
        input: &DenseTensor<T>,
        upstream: &DenseTensor<T>,
        mut input_grad: Option<&mut [T]>,
        weight_grad: &mut [T],
        mut bias_grad: Option<&mut [T]>,
    ) -> Result<()> {
        let in_shape = input.shape();
        let out_shape = self.output_shape(in_shape)?;
        if upstream.shape() != out_shape {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {} does not match conv output {out_shape}",
                upstream.shape()
            )));
        }
        let weights = match self.precision {
            Precision::Full => &self.weights,
            Precision::Binary => &self.signs,
        };
        // Binary weight gradients are accumulated against the signs, then masked.
        let mut local = match self.precision {
            Precision::Full => None,
            Precision::Binary => Some(vec![T::zero(); weight_grad.len()]),
        };
        let wg: &mut [T] = match &mut local {
            Some(v) => v,
            None => weight_grad,
        };
        let seg = self.kernel.time * self.in_maps;
        let x = input.data();
        let g = upstream.data();
        for oe in 0..out_shape.electrodes {
            for ot in 0..out_shape.time {
                let go = &g[(oe * out_shape.time + ot) * self.out_maps..][..self.out_maps];
                if let Some(bg) = bias_grad.as_deref_mut() {
                    for (b, &v) in bg.iter_mut().zip(go) {
                        *b = *b + v;
                    }
                }
                for a in 0..self.kernel.electrodes {
                    let e = oe * self.stride.electrodes + a;
                    let start = (e * in_shape.time + ot * self.stride.time) * self.in_maps;
                    let window = &x[start..start + seg];
                    for (o, &gv) in go.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        let off = (o * self.kernel.electrodes + a) * seg;
                        if let Some(ig) = input_grad.as_deref_mut() {
                            axpy(&mut ig[start..start + seg], gv, &weights[off..off + seg]);
                        }
                        axpy(&mut wg[off..off + seg], gv, window);
                    }
                }
            }
        }
        if let Some(local) = local {
            for ((dst, &gsign), &latent) in weight_grad.iter_mut().zip(&local).zip(&self.weights) {
                *dst = *dst + ste_backward(gsign, latent);
            }
        }
        Ok(())
    }
}
