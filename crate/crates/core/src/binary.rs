//! Binarization, bit packing and the XNOR-popcount dot product.
//!
//! A ±1 value is stored as one bit: 1 for +1, 0 for -1. Element `i` lives in
//! bit `i % 64` of word `i / 64` (LSB first). Bits past the logical length
//! are always zero, so word-level XOR/AND never sees garbage in the tail.

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// Mask selecting the valid bits of the last word of a `len`-bit vector.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Sign with `sign(0) = +1`. NaN is rejected.
pub fn binarize(x: f32) -> Result<i8> {
    if x.is_nan() {
        return Err(Error::InvalidValue("cannot binarize NaN".into()));
    }
    Ok(if x >= 0.0 { 1 } else { -1 })
}

/// Infallible sign used on hot paths where inputs are already known finite.
#[inline]
pub fn sign<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

/// Straight-through gradient of `sign` using the hard-tanh surrogate: the
/// upstream gradient passes unchanged where `|x| <= 1` and is zeroed elsewhere.
#[inline]
pub fn ste_backward<T: Real>(upstream_grad: T, preactivation: T) -> T {
    if preactivation.abs() <= T::one() {
        upstream_grad
    } else {
        T::zero()
    }
}

/// Clamp a latent weight into [-1, 1].
#[inline]
pub fn clip_latent<T: Real>(w: T) -> T {
    w.min(T::one()).max(-T::one())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTensor {
    len: usize,
    words: Vec<u64>,
}

impl BitTensor {
    pub fn pack(values: &[i8]) -> Result<Self> {
        let mut words = vec![0u64; words_for(values.len())];
        for (i, &v) in values.iter().enumerate() {
            match v {
                1 => words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
                -1 => {}
                other => {
                    return Err(Error::InvalidValue(format!(
                        "pack expects +1/-1, got {other} at index {i}"
                    )))
                }
            }
        }
        Ok(BitTensor {
            len: values.len(),
            words,
        })
    }

    /// Packs the signs of real values (`x >= 0` becomes +1).
    pub fn from_signs<T: Real>(values: &[T]) -> Self {
        let mut words = vec![0u64; words_for(values.len())];
        pack_signs_into(values, &mut words);
        BitTensor {
            len: values.len(),
            words,
        }
    }

    /// Rebuilds a tensor from raw words, validating the canonical tail.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::ShapeMismatch(format!(
                "{len} bits need {} words, got {}",
                words_for(len),
                words.len()
            )));
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Error::InvalidValue("non-zero bits past logical length".into()));
            }
        }
        Ok(BitTensor { len, words })
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.len)
            .map(|i| {
                if self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 {
                    1
                } else {
                    -1
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.len);
        }
        BitTensor {
            len: self.len,
            words,
        }
    }
}

/// Σ aᵢ·bᵢ over the ±1 values of two equal-length bit tensors.
pub fn xnor_dot(a: &BitTensor, b: &BitTensor) -> Result<i64> {
    if a.len != b.len {
        return Err(Error::ShapeMismatch(format!(
            "xnor_dot lengths differ: {} vs {}",
            a.len, b.len
        )));
    }
    Ok(xnor_dot_words(&a.words, &b.words, a.len))
}

/// Word-slice kernel behind [`xnor_dot`]: `2·popcount(!(a ^ b) & valid) − len`.
///
/// Both slices must hold at least `words_for(len)` words.
#[inline]
pub fn xnor_dot_words(a: &[u64], b: &[u64], len: usize) -> i64 {
    let n = words_for(len);
    if n == 0 {
        return 0;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let mut matches = 0u32;
    for (x, y) in a[..n - 1].iter().zip(&b[..n - 1]) {
        matches += (!(x ^ y)).count_ones();
    }
    matches += (!(a[n - 1] ^ b[n - 1]) & tail_mask(len)).count_ones();
    2 * matches as i64 - len as i64
}

/// Packs signs of `values` into `dst` (which must be zeroed and large enough).
pub(crate) fn pack_signs_into<T: Real>(values: &[T], dst: &mut [u64]) {
    for (w, chunk) in dst.iter_mut().zip(values.chunks(WORD_BITS)) {
        let mut word = 0u64;
        for (i, &v) in chunk.iter().enumerate() {
            word |= ((v >= T::zero()) as u64) << i;
        }
        *w = word;
    }
}

#[inline]
fn read_bits(src: &[u64], offset: usize, count: usize) -> u64 {
    debug_assert!((1..=WORD_BITS).contains(&count));
    let w = offset / WORD_BITS;
    let s = offset % WORD_BITS;
    let mut v = src[w] >> s;
    if s != 0 && s + count > WORD_BITS {
        v |= src[w + 1] << (WORD_BITS - s);
    }
    if count == WORD_BITS {
        v
    } else {
        v & ((1u64 << count) - 1)
    }
}

/// ORs `len` bits of `src` starting at `src_off` into `dst` at `dst_off`.
/// The destination range must be zero beforehand.
pub(crate) fn copy_bits(src: &[u64], src_off: usize, dst: &mut [u64], dst_off: usize, len: usize) {
    let mut done = 0;
    while done < len {
        let d = dst_off + done;
        let room = WORD_BITS - d % WORD_BITS;
        let take = room.min(len - done);
        let bits = read_bits(src, src_off + done, take);
        dst[d / WORD_BITS] |= bits << (d % WORD_BITS);
        done += take;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dot(a: &[i8], b: &[i8]) -> i64 {
        a.iter().zip(b).map(|(&x, &y)| x as i64 * y as i64).sum()
    }

    fn random_signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
        (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(0.3).unwrap(), 1);
        assert_eq!(binarize(-2.0).unwrap(), -1);
        assert_eq!(binarize(0.0).unwrap(), 1);
        assert_eq!(binarize(-0.0).unwrap(), 1);
        assert!(matches!(binarize(f32::NAN), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn pack_examples() {
        let t = BitTensor::pack(&[1, -1, 1, -1]).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.words(), &[0b0101]);
        assert_eq!(t.unpack(), vec![1, -1, 1, -1]);

        let empty = BitTensor::pack(&[]).unwrap();
        assert_eq!(empty.len(), 0);
        assert!(empty.words().is_empty());

        let ones = BitTensor::pack(&[1; 65]).unwrap();
        assert_eq!(ones.words().len(), 2);
        assert_eq!(ones.words()[0], u64::MAX);
        assert_eq!(ones.words()[1], 1);
    }

    #[test]
    fn pack_rejects_out_of_domain() {
        assert!(matches!(BitTensor::pack(&[1, 0, -1]), Err(Error::InvalidValue(_))));
        assert!(matches!(BitTensor::pack(&[2]), Err(Error::InvalidValue(_))));
    }

    #[test]
    fn from_words_checks_tail() {
        assert!(BitTensor::from_words(3, vec![0b1000]).is_err());
        assert!(BitTensor::from_words(3, vec![0b101]).is_ok());
        assert!(BitTensor::from_words(65, vec![0]).is_err());
    }

    #[test]
    fn xnor_dot_examples() {
        let a = BitTensor::pack(&[1, -1, 1, -1]).unwrap();
        let b = BitTensor::pack(&[1, 1, -1, -1]).unwrap();
        assert_eq!(xnor_dot(&a, &a).unwrap(), 4);
        assert_eq!(xnor_dot(&a, &a.complement()).unwrap(), -4);
        assert_eq!(xnor_dot(&a, &b).unwrap(), 0);
        let c = BitTensor::pack(&[1, 1, 1]).unwrap();
        assert!(matches!(xnor_dot(&a, &c), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn xnor_dot_matches_naive_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let n = rng.random_range(1..=513);
            let a = random_signs(&mut rng, n);
            let b = random_signs(&mut rng, n);
            let got = xnor_dot(&BitTensor::pack(&a).unwrap(), &BitTensor::pack(&b).unwrap()).unwrap();
            assert_eq!(got, naive_dot(&a, &b));
            assert!(got.abs() <= n as i64);
            assert_eq!(got.rem_euclid(2), (n as i64).rem_euclid(2));
        }
    }

    #[test]
    fn round_trip_all_small_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 0..=130 {
            let v = random_signs(&mut rng, n);
            let t = BitTensor::pack(&v).unwrap();
            assert_eq!(t.words().len(), words_for(n));
            assert_eq!(t.unpack(), v);
        }
    }

    #[test]
    fn complement_keeps_canonical_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=200 {
            let a = BitTensor::pack(&random_signs(&mut rng, n)).unwrap();
            let b = BitTensor::pack(&random_signs(&mut rng, n)).unwrap();
            let c = a.complement();
            assert!(BitTensor::from_words(n, c.words().to_vec()).is_ok());
            // XOR and AND of canonical tensors stay canonical.
            let x: Vec<u64> = a.words().iter().zip(b.words()).map(|(p, q)| p ^ q).collect();
            let y: Vec<u64> = a.words().iter().zip(b.words()).map(|(p, q)| p & q).collect();
            assert!(BitTensor::from_words(n, x).is_ok());
            assert!(BitTensor::from_words(n, y).is_ok());
            // Masked XNOR popcount never counts tail bits.
            assert_eq!(xnor_dot(&a, &c).unwrap(), -(n as i64));
        }
    }

    #[test]
    fn ste_examples() {
        assert_eq!(ste_backward(0.7f32, 0.5), 0.7);
        assert_eq!(ste_backward(0.7f32, 1.5), 0.0);
        assert_eq!(ste_backward(0.7f32, -1.0), 0.7);
        assert_eq!(ste_backward(0.7f32, 1.0), 0.7);
        assert_eq!(ste_backward(0.7f32, -1.0001), 0.0);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_latent(0.4f32), 0.4);
        assert_eq!(clip_latent(3.0f32), 1.0);
        assert_eq!(clip_latent(-1.7f32), -1.0);
    }

    #[test]
    fn copy_bits_matches_unpacked_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let n = rng.random_range(1..300);
            let v = random_signs(&mut rng, n);
            let src = BitTensor::pack(&v).unwrap();
            let off = rng.random_range(0..n);
            let len = rng.random_range(0..=n - off);
            let dst_off = rng.random_range(0..70);
            let mut dst = vec![0u64; words_for(dst_off + len)];
            copy_bits(src.words(), off, &mut dst, dst_off, len);
            for i in 0..len {
                let bit = dst[(dst_off + i) / 64] >> ((dst_off + i) % 64) & 1;
                assert_eq!(bit == 1, v[off + i] == 1);
            }
            // nothing written outside the target range
            for i in 0..dst_off {
                assert_eq!(dst[i / 64] >> (i % 64) & 1, 0);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ste_is_indicator_times_grad(g in -10.0f64..10.0, x in -3.0f64..3.0, k in -4.0f64..4.0) {
                let expect = if x.abs() <= 1.0 { g } else { 0.0 };
                prop_assert_eq!(ste_backward(g, x), expect);
                prop_assert_eq!(ste_backward(k * g, x), k * ste_backward(g, x));
            }

            #[test]
            fn pack_unpack_round_trip(v in proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], 0..400)) {
                let t = BitTensor::pack(&v).unwrap();
                prop_assert_eq!(t.unpack(), v);
            }
        }
    }
}
