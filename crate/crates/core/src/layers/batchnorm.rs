//! Per-map batch normalization and its folding into sign thresholds.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Real, Shape};

use super::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Real = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    /// Weight of the old running statistic in each update.
    pub momentum: T,
}

/// What the train-mode backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub normalized: Vec<DenseTensor<T>>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub input: Vec<DenseTensor<T>>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Sign of a batch-norm output expressed as a comparison on its input:
/// the output is +1 iff `(x >= threshold) != flip`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub threshold: f32,
    pub flip: bool,
}

impl ThresholdRule {
    #[inline]
    pub fn fires(&self, x: f32) -> bool {
        (x >= self.threshold) != self.flip
    }

    pub fn apply(&self, x: f32) -> f32 {
        if self.fires(x) {
            1.0
        } else {
            -1.0
        }
    }
}

impl<T: Real> BatchNorm<T> {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(maps: usize, eps: T, momentum: T) -> Result<Self> {
        if maps == 0 {
            return Err(Error::InvalidConfig("batch norm needs at least one map".into()));
        }
        if !(eps > T::zero()) {
            return Err(Error::InvalidConfig("batch norm epsilon must be > 0".into()));
        }
        if !(momentum >= T::zero() && momentum <= T::one()) {
            return Err(Error::InvalidConfig("batch norm momentum must be in [0, 1]".into()));
        }
        Ok(BatchNorm {
            gamma: vec![T::one(); maps],
            beta: vec![T::zero(); maps],
            running_mean: vec![T::zero(); maps],
            running_var: vec![T::one(); maps],
            eps,
            momentum,
        })
    }

    pub fn maps(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if shape.maps != self.maps() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm has {} maps, input {shape}",
                self.maps()
            )));
        }
        Ok(())
    }

    /// `(mean, std)` used by the inference path for map `m`.
    #[inline]
    fn infer_stats(&self, m: usize) -> (T, T) {
        (self.running_mean[m], (self.running_var[m] + self.eps).sqrt())
    }

    /// The inference-mode affine map, shared with threshold folding so both
    /// evaluate the exact same floating-point expression.
    #[inline]
    fn affine(x: T, mean: T, std: T, gamma: T, beta: T) -> T {
        gamma * ((x - mean) / std) + beta
    }

    pub fn normalize_infer(&self, m: usize, x: T) -> T {
        let (mean, std) = self.infer_stats(m);
        Self::affine(x, mean, std, self.gamma[m], self.beta[m])
    }

    pub fn forward_infer(&self, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.check(x.shape())?;
        let maps = self.maps();
        let stats: Vec<(T, T)> = (0..maps).map(|m| self.infer_stats(m)).collect();
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(maps) {
            for (m, v) in row.iter_mut().enumerate() {
                let (mean, std) = stats[m];
                *v = Self::affine(*v, mean, std, self.gamma[m], self.beta[m]);
            }
        }
        Ok(out)
    }

    /// Normalizes with batch statistics pooled over every sample and position,
    /// then folds those statistics into the running estimates.
    pub fn forward_train(&mut self, xs: &[DenseTensor<T>]) -> Result<(Vec<DenseTensor<T>>, BnCache<T>)> {
        if xs.is_empty() {
            return Err(Error::InvalidShape("empty batch".into()));
        }
        let maps = self.maps();
        for x in xs {
            self.check(x.shape())?;
        }
        let mut sum = vec![0.0f64; maps];
        let mut count = 0usize;
        for x in xs {
            for row in x.data().chunks_exact(maps) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v.as_f64();
                }
            }
            count += x.data().len() / maps;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; maps];
        for x in xs {
            for row in x.data().chunks_exact(maps) {
                for m in 0..maps {
                    let d = row[m].as_f64() - mean[m];
                    sq[m] += d * d;
                }
            }
        }
        let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::of(1.0 / (v + self.eps.as_f64()).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();

        let mut normalized = Vec::with_capacity(xs.len());
        let mut outputs = Vec::with_capacity(xs.len());
        for x in xs {
            let mut xhat = x.clone();
            let mut y = x.clone();
            for (hrow, yrow) in xhat
                .data_mut()
                .chunks_exact_mut(maps)
                .zip(y.data_mut().chunks_exact_mut(maps))
            {
                for m in 0..maps {
                    let h = (hrow[m] - mean_t[m]) * inv_std[m];
                    hrow[m] = h;
                    yrow[m] = self.gamma[m] * h + self.beta[m];
                }
            }
            normalized.push(xhat);
            outputs.push(y);
        }

        let keep = self.momentum;
        let take = T::one() - keep;
        for m in 0..maps {
            self.running_mean[m] = keep * self.running_mean[m] + take * mean_t[m];
            self.running_var[m] = keep * self.running_var[m] + take * T::of(var[m]);
        }
        Ok((outputs, BnCache { normalized, inv_std }))
    }

    pub fn forward(&mut self, xs: &[DenseTensor<T>], mode: Mode) -> Result<Vec<DenseTensor<T>>> {
        match mode {
            Mode::Train => Ok(self.forward_train(xs)?.0),
            Mode::Infer => xs.iter().map(|x| self.forward_infer(x)).collect(),
        }
    }

    /// Backward pass through batch-statistics normalization.
    pub fn backward_train(&self, cache: &BnCache<T>, upstream: &[DenseTensor<T>]) -> Result<BnGrads<T>> {
        let maps = self.maps();
        if upstream.len() != cache.normalized.len() {
            return Err(Error::ShapeMismatch("batch size changed between passes".into()));
        }
        let mut sum_dy = vec![0.0f64; maps];
        let mut sum_dy_xhat = vec![0.0f64; maps];
        let mut count = 0usize;
        for (g, h) in upstream.iter().zip(&cache.normalized) {
            if g.shape() != h.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "upstream {} vs activation {}",
                    g.shape(),
                    h.shape()
                )));
            }
            for (grow, hrow) in g.data().chunks_exact(maps).zip(h.data().chunks_exact(maps)) {
                for m in 0..maps {
                    let dy = grow[m].as_f64();
                    sum_dy[m] += dy;
                    sum_dy_xhat[m] += dy * hrow[m].as_f64();
                }
            }
            count += g.data().len() / maps;
        }
        let n = count as f64;
        // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
        let scale: Vec<T> = (0..maps)
            .map(|m| T::of(self.gamma[m].as_f64() * cache.inv_std[m].as_f64() / n))
            .collect();
        let sum_dy_t: Vec<T> = sum_dy.iter().map(|&s| T::of(s)).collect();
        let sum_dyx_t: Vec<T> = sum_dy_xhat.iter().map(|&s| T::of(s)).collect();
        let nt = T::of(n);
        let input = upstream
            .iter()
            .zip(&cache.normalized)
            .map(|(g, h)| {
                let mut dx = g.clone();
                for (drow, hrow) in dx.data_mut().chunks_exact_mut(maps).zip(h.data().chunks_exact(maps)) {
                    for m in 0..maps {
                        drow[m] = scale[m] * (nt * drow[m] - sum_dy_t[m] - hrow[m] * sum_dyx_t[m]);
                    }
                }
                dx
            })
            .collect();
        Ok(BnGrads {
            input,
            gamma: sum_dy_xhat.into_iter().map(T::of).collect(),
            beta: sum_dy.into_iter().map(T::of).collect(),
        })
    }

    /// Backward pass through running-statistics normalization (a per-map affine map).
    pub fn backward_infer(&self, x: &DenseTensor<T>, upstream: &DenseTensor<T>) -> Result<BnGrads<T>> {
        self.check(x.shape())?;
        if x.shape() != upstream.shape() {
            return Err(Error::ShapeMismatch("upstream does not match input".into()));
        }
        let maps = self.maps();
        let stats: Vec<(T, T)> = (0..maps).map(|m| self.infer_stats(m)).collect();
        let mut dgamma = vec![0.0f64; maps];
        let mut dbeta = vec![0.0f64; maps];
        let mut dx = upstream.clone();
        for (drow, xrow) in dx.data_mut().chunks_exact_mut(maps).zip(x.data().chunks_exact(maps)) {
            for m in 0..maps {
                let (mean, std) = stats[m];
                let g = drow[m];
                dbeta[m] += g.as_f64();
                dgamma[m] += (g * ((xrow[m] - mean) / std)).as_f64();
                drow[m] = g * self.gamma[m] / std;
            }
        }
        Ok(BnGrads {
            input: vec![dx],
            gamma: dgamma.into_iter().map(T::of).collect(),
            beta: dbeta.into_iter().map(T::of).collect(),
        })
    }
}

/// Order-preserving map from finite f32 to integers (`-0.0` and `0.0` coincide).
fn order_key(x: f32) -> i64 {
    let b = x.to_bits();
    if b & 0x8000_0000 != 0 {
        -((b & 0x7fff_ffff) as i64)
    } else {
        b as i64
    }
}

fn from_order_key(k: i64) -> f32 {
    if k < 0 {
        f32::from_bits((-k) as u32 | 0x8000_0000)
    } else {
        f32::from_bits(k as u32)
    }
}

/// Smallest finite `x` with `pred(x)`, for a predicate that is false below
/// some point and true above it. `None` if it never holds.
fn first_true(pred: impl Fn(f32) -> bool) -> Option<f32> {
    let (mut lo, mut hi) = (order_key(-f32::MAX), order_key(f32::MAX));
    if !pred(f32::MAX) {
        return None;
    }
    if pred(-f32::MAX) {
        return Some(f32::NEG_INFINITY);
    }
    // invariant: pred(lo) false, pred(hi) true
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pred(from_order_key(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(from_order_key(hi))
}

impl BatchNorm<f32> {
    /// Folds inference-mode normalization followed by `sign` into one
    /// comparison per map.
    ///
    /// Every rounding step of the affine map is monotone, so its sign flips at
    /// most once along the float line. The crossing is located by bisection
    /// over the ordered float bit patterns, evaluating the same expression as
    /// [`BatchNorm::forward_infer`]; the rule therefore agrees with
    /// arithmetic BN + sign on every finite input, not just approximately.
    pub fn fold_sign(&self) -> Vec<ThresholdRule> {
        (0..self.maps())
            .map(|m| {
                let gamma = self.gamma[m];
                let positive = |x: f32| self.normalize_infer(m, x) >= 0.0;
                if gamma == 0.0 {
                    return ThresholdRule {
                        threshold: f32::NEG_INFINITY,
                        flip: !(self.beta[m] >= 0.0),
                    };
                }
                if gamma > 0.0 {
                    ThresholdRule {
                        threshold: first_true(positive).unwrap_or(f32::INFINITY),
                        flip: false,
                    }
                } else {
                    ThresholdRule {
                        threshold: first_true(|x| !positive(x)).unwrap_or(f32::INFINITY),
                        flip: true,
                    }
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bn_with(gamma: f32, beta: f32, mean: f32, var: f32, eps: f32) -> BatchNorm<f32> {
        let mut bn = BatchNorm::new(1, eps, 0.9).unwrap();
        bn.gamma[0] = gamma;
        bn.beta[0] = beta;
        bn.running_mean[0] = mean;
        bn.running_var[0] = var;
        bn
    }

    fn sign_of(y: f32) -> bool {
        y >= 0.0
    }

    #[test]
    fn train_mode_standardizes_each_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = Shape::new(3, 7, 2);
        let xs: Vec<DenseTensor<f64>> = (0..4)
            .map(|_| {
                let d = (0..shape.len()).map(|i| rng.random_range(-3.0..5.0) + i as f64 % 3.0).collect();
                DenseTensor::from_vec(shape, d).unwrap()
            })
            .collect();
        let mut bn = BatchNorm::<f64>::new(2, 1e-12, 0.9).unwrap();
        let ys = bn.forward(&xs, Mode::Train).unwrap();
        for m in 0..2 {
            let vals: Vec<f64> = ys.iter().flat_map(|y| y.data().iter().skip(m).step_by(2).copied()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let mut bn = BatchNorm::<f32>::new(1, 1e-3, 0.9).unwrap();
        bn.gamma[0] = 0.0;
        bn.beta[0] = 0.75;
        let x = DenseTensor::from_vec(Shape::new(1, 4, 1), vec![1.0f32, -3.0, 8.0, 0.0]).unwrap();
        for y in bn.forward(std::slice::from_ref(&x), Mode::Train).unwrap() {
            assert!(y.data().iter().all(|&v| v == 0.75));
        }
        assert!(bn.forward_infer(&x).unwrap().data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn infer_mode_hand_example() {
        let bn = bn_with(3.0, 1.0, 2.0, 4.0, 1e-12);
        assert_eq!(bn.normalize_infer(0, 4.0), 4.0);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new(1, 1e-5, 0.9).unwrap();
        let x = DenseTensor::from_vec(Shape::new(1, 2, 1), vec![1.0, 3.0]).unwrap();
        bn.forward_train(&[x]).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fold_examples() {
        let r = bn_with(1.0, 0.0, 0.0, 1.0, 1e-12).fold_sign()[0];
        assert_eq!(r, ThresholdRule { threshold: 0.0, flip: false });

        let r = bn_with(-1.0, 0.0, 0.0, 1.0, 1e-12).fold_sign()[0];
        assert!(r.flip);
        // sign(-0) = +1, so the first negative output is at the smallest positive float.
        assert!(r.threshold > 0.0 && r.threshold < 1e-40);

        let r = bn_with(2.0, -4.0, 1.0, 1.0, 1e-12).fold_sign()[0];
        assert_eq!(r, ThresholdRule { threshold: 3.0, flip: false });

        let r = bn_with(0.0, -0.5, 3.0, 2.0, 1e-3).fold_sign()[0];
        assert!(!r.fires(-1e30) && !r.fires(0.0) && !r.fires(1e30));
        let r = bn_with(0.0, 0.5, 3.0, 2.0, 1e-3).fold_sign()[0];
        assert!(r.fires(-1e30) && r.fires(0.0) && r.fires(1e30));
    }

    #[test]
    fn fold_exhaustive_sweep_negative_gamma() {
        let bn = bn_with(-1.0, 0.0, 0.0, 1.0, 1e-12);
        let rule = bn.fold_sign()[0];
        for i in -2000..=2000 {
            let x = i as f32 * 0.01;
            assert_eq!(rule.fires(x), sign_of(bn.normalize_infer(0, x)), "x = {x}");
        }
    }

    #[test]
    fn fold_matches_arithmetic_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let gamma = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(-3.0f32..3.0) };
            let bn = bn_with(
                gamma,
                rng.random_range(-2.0..2.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.0..40.0),
                1e-3,
            );
            let rule = bn.fold_sign()[0];
            for _ in 0..10_000 {
                let x = match rng.random_range(0..3) {
                    0 => rng.random_range(-100.0f32..100.0),
                    1 => rng.random_range(-100i32..100) as f32,
                    _ => rule.threshold + rng.random_range(-1e-4f32..1e-4),
                };
                if !x.is_finite() {
                    continue;
                }
                assert_eq!(rule.fires(x), sign_of(bn.normalize_infer(0, x)));
            }
            // exactly at and just below the threshold
            if rule.threshold.is_finite() {
                let t = rule.threshold;
                let below = from_order_key(order_key(t) - 1);
                assert_eq!(rule.fires(t), sign_of(bn.normalize_infer(0, t)));
                assert_eq!(rule.fires(below), sign_of(bn.normalize_infer(0, below)));
            }
        }
    }

    fn fd_check(analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        assert!(err < 1e-4, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-5;
        for _ in 0..50 {
            let maps = rng.random_range(1..4);
            let shape = Shape::new(rng.random_range(1..3), rng.random_range(1..5), maps);
            let batch = rng.random_range(1..4);
            let xs: Vec<DenseTensor<f64>> = (0..batch)
                .map(|_| {
                    DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-2.0..2.0)).collect())
                        .unwrap()
                })
                .collect();
            if batch * shape.electrodes * shape.time < 2 {
                continue;
            }
            let mut bn = BatchNorm::<f64>::new(maps, 1e-3, 0.9).unwrap();
            for m in 0..maps {
                bn.gamma[m] = rng.random_range(-2.0..2.0);
                bn.beta[m] = rng.random_range(-1.0..1.0);
            }
            let r: Vec<Vec<f64>> = (0..batch)
                .map(|_| (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let loss = |bn: &BatchNorm<f64>, xs: &[DenseTensor<f64>]| -> f64 {
                let mut b = bn.clone();
                let ys = b.forward_train(xs).unwrap().0;
                ys.iter().zip(&r).map(|(y, r)| y.data().iter().zip(r).map(|(a, b)| a * b).sum::<f64>()).sum()
            };
            let mut probe = bn.clone();
            let (_, cache) = probe.forward_train(&xs).unwrap();
            let up: Vec<DenseTensor<f64>> = r.iter().map(|v| DenseTensor::from_vec(shape, v.clone()).unwrap()).collect();
            let grads = bn.backward_train(&cache, &up).unwrap();
            for b in 0..batch {
                for i in 0..shape.len() {
                    let mut xp = xs.clone();
                    xp[b].data_mut()[i] += h;
                    let mut xm = xs.clone();
                    xm[b].data_mut()[i] -= h;
                    fd_check(grads.input[b].data()[i], (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h));
                }
            }
            for m in 0..maps {
                let mut p = bn.clone();
                p.gamma[m] += h;
                let mut q = bn.clone();
                q.gamma[m] -= h;
                fd_check(grads.gamma[m], (loss(&p, &xs) - loss(&q, &xs)) / (2.0 * h));
                let mut p = bn.clone();
                p.beta[m] += h;
                let mut q = bn.clone();
                q.beta[m] -= h;
                fd_check(grads.beta[m], (loss(&p, &xs) - loss(&q, &xs)) / (2.0 * h));
            }
        }
    }

    #[test]
    fn infer_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let h = 1e-6;
        for _ in 0..50 {
            let maps = rng.random_range(1..4);
            let shape = Shape::new(rng.random_range(1..3), rng.random_range(1..5), maps);
            let x = DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let mut bn = BatchNorm::<f64>::new(maps, 1e-3, 0.9).unwrap();
            for m in 0..maps {
                bn.gamma[m] = rng.random_range(-2.0..2.0);
                bn.beta[m] = rng.random_range(-1.0..1.0);
                bn.running_mean[m] = rng.random_range(-1.0..1.0);
                bn.running_var[m] = rng.random_range(0.1..3.0);
            }
            let r: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |bn: &BatchNorm<f64>, x: &DenseTensor<f64>| -> f64 {
                bn.forward_infer(x).unwrap().data().iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let grads = bn
                .backward_infer(&x, &DenseTensor::from_vec(shape, r.clone()).unwrap())
                .unwrap();
            for i in 0..shape.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                fd_check(grads.input[0].data()[i], (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h));
            }
            for m in 0..maps {
                let mut p = bn.clone();
                p.gamma[m] += h;
                let mut q = bn.clone();
                q.gamma[m] -= h;
                fd_check(grads.gamma[m], (loss(&p, &x) - loss(&q, &x)) / (2.0 * h));
            }
        }
    }
}
