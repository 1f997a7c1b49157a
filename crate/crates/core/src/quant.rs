//! Group-wise weight quantization with an implicit zero point.
//!
//! A `bits`-wide code `q` in `[0, 2^bits)` dequantizes to
//! `scale * (q - 2^(bits-1))`, with one scale per `(row, group_size` run along K`)`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MAX_BITS: u32 = 4;
pub const DEFAULT_GROUP_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights<T> {
    m: usize,
    k: usize,
    bits: u32,
    group_size: usize,
    qvalues: Vec<u8>,
    scales: Vec<T>,
}

pub fn check_bits(bits: u32) -> Result<()> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(Error::param(format!("bits must be in [1, {MAX_BITS}], got {bits}")));
    }
    Ok(())
}

impl<T: Scalar> QuantizedWeights<T> {
    pub fn new(
        m: usize,
        k: usize,
        bits: u32,
        group_size: usize,
        qvalues: Vec<u8>,
        scales: Vec<T>,
    ) -> Result<Self> {
        check_bits(bits)?;
        if group_size == 0 || k % group_size != 0 {
            return Err(Error::param(format!(
                "k ({k}) must be a positive multiple of group_size ({group_size})"
            )));
        }
        if qvalues.len() != m * k {
            return Err(Error::shape(format!("qvalues length {} != {m} x {k}", qvalues.len())));
        }
        let n_scales = m * (k / group_size);
        if scales.len() != n_scales {
            return Err(Error::shape(format!("scales length {} != {n_scales}", scales.len())));
        }
        let limit = 1u32 << bits;
        if let Some(pos) = qvalues.iter().position(|&q| q as u32 >= limit) {
            return Err(Error::Input(format!(
                "qvalue {} at {pos} does not fit in {bits} bits",
                qvalues[pos]
            )));
        }
        if scales.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("non-finite scale".into()));
        }
        Ok(QuantizedWeights {
            m,
            k,
            bits,
            group_size,
            qvalues,
            scales,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn groups_per_row(&self) -> usize {
        self.k / self.group_size
    }

    pub fn qvalues(&self) -> &[u8] {
        &self.qvalues
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    #[inline]
    pub fn q(&self, m: usize, k: usize) -> u8 {
        self.qvalues[m * self.k + k]
    }

    #[inline]
    pub fn scale(&self, m: usize, group: usize) -> T {
        self.scales[m * self.groups_per_row() + group]
    }

    /// Implicit zero point `2^(bits-1)`.
    pub fn offset(&self) -> i32 {
        1 << (self.bits - 1)
    }

    /// Pads K up to a multiple of `multiple` with codes that dequantize to zero.
    /// New groups get zero scales.
    pub fn pad_k(&self, multiple: usize) -> Result<Self> {
        if multiple == 0 {
            return Err(Error::param("padding multiple must be positive"));
        }
        let lcm = num_lcm(multiple, self.group_size);
        let k_new = self.k.div_ceil(lcm) * lcm;
        if k_new == self.k {
            return Ok(self.clone());
        }
        let offset = self.offset() as u8;
        let gpr_old = self.groups_per_row();
        let gpr_new = k_new / self.group_size;
        let mut qvalues = vec![offset; self.m * k_new];
        let mut scales = vec![T::zero(); self.m * gpr_new];
        for r in 0..self.m {
            qvalues[r * k_new..r * k_new + self.k]
                .copy_from_slice(&self.qvalues[r * self.k..(r + 1) * self.k]);
            scales[r * gpr_new..r * gpr_new + gpr_old]
                .copy_from_slice(&self.scales[r * gpr_old..(r + 1) * gpr_old]);
        }
        Self::new(self.m, k_new, self.bits, self.group_size, qvalues, scales)
    }
}

fn num_lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Entry-wise `scale * (q - 2^(bits-1))`.
pub fn dequantize<T: Scalar>(qw: &QuantizedWeights<T>) -> Matrix<T> {
    let offset = qw.offset();
    let mut out = Matrix::zeros(qw.m, qw.k);
    for r in 0..qw.m {
        let row = out.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            let level = qw.q(r, c) as i32 - offset;
            *v = qw.scale(r, c / qw.group_size) * T::of_i32(level);
        }
    }
    out
}

/// Number of candidate scales tried per group before the least-squares refinement.
const SCALE_CANDIDATES: usize = 16;

/// Round-to-nearest group quantization.
///
/// Per group, the element of largest magnitude is mapped near the most negative
/// level; a small grid of such scales is tried and the one with the lowest squared
/// error kept, followed by one least-squares rescale of the chosen codes. Codes are
/// always `round(x / scale)` clamped to the representable range.
pub fn quantize_rtn<T: Scalar>(w: &Matrix<T>, bits: u32, group_size: usize) -> Result<QuantizedWeights<T>> {
    check_bits(bits)?;
    let (m, k) = (w.rows(), w.cols());
    if group_size == 0 || k % group_size != 0 {
        return Err(Error::param(format!(
            "k ({k}) must be a positive multiple of group_size ({group_size})"
        )));
    }
    let offset = 1i32 << (bits - 1);
    let lo = -offset as f64;
    let hi = (offset - 1) as f64;
    let mut qvalues = vec![0u8; m * k];
    let mut scales = Vec::with_capacity(m * (k / group_size));
    let mut xs = vec![0f64; group_size];

    for r in 0..m {
        for (gi, chunk) in w.row(r).chunks_exact(group_size).enumerate() {
            for (x, v) in xs.iter_mut().zip(chunk) {
                *x = v.as_f64();
            }
            let extreme = xs
                .iter()
                .copied()
                .fold(0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            let scale = if extreme == 0.0 {
                0.0
            } else {
                choose_scale(&xs, extreme, offset as f64, lo, hi)
            };
            let scale_t = T::of(scale);
            let scale_r = scale_t.as_f64();
            let base = r * k + gi * group_size;
            for (j, &x) in xs.iter().enumerate() {
                let level = if scale_r == 0.0 {
                    0.0
                } else {
                    (x / scale_r).round().clamp(lo, hi)
                };
                qvalues[base + j] = (level as i32 + offset) as u8;
            }
            scales.push(scale_t);
        }
    }
    QuantizedWeights::new(m, k, bits, group_size, qvalues, scales)
}

fn group_sse(xs: &[f64], scale: f64, lo: f64, hi: f64) -> f64 {
    xs.iter()
        .map(|&x| {
            let level = (x / scale).round().clamp(lo, hi);
            let e = level * scale - x;
            e * e
        })
        .sum()
}

fn choose_scale(xs: &[f64], extreme: f64, levels: f64, lo: f64, hi: f64) -> f64 {
    // The plain "extreme maps to the lowest level" scale goes first so exact
    // representations (e.g. constant groups) win ties.
    let mut best = extreme / -levels;
    let mut best_err = group_sse(xs, best, lo, hi);
    for i in 0..SCALE_CANDIDATES {
        let ratio = 0.65 + 0.65 * i as f64 / (SCALE_CANDIDATES - 1) as f64;
        let s = extreme / (-levels * ratio);
        let e = group_sse(xs, s, lo, hi);
        if e < best_err {
            best = s;
            best_err = e;
        }
    }
    let (num, den) = xs.iter().fold((0f64, 0f64), |(n, d), &x| {
        let level = (x / best).round().clamp(lo, hi);
        (n + x * level, d + level * level)
    });
    if den > 0.0 {
        let s = num / den;
        if s != 0.0 && s.is_finite() {
            let e = group_sse(xs, s, lo, hi);
            if e < best_err {
                best = s;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(bits: u32, q: u8, scale: f32) -> f32 {
        let qw = QuantizedWeights::new(1, 1, bits, 1, vec![q], vec![scale]).unwrap();
        dequantize(&qw).get(0, 0)
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(single(4, 8, 1.0), 0.0);
        assert_eq!(single(4, 15, 0.5), 3.5);
        assert_eq!(single(1, 0, 2.0), -2.0);
    }

    #[test]
    fn rejects_out_of_range_codes() {
        let err = QuantizedWeights::<f32>::new(1, 2, 2, 2, vec![0, 4], vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(QuantizedWeights::<f32>::new(1, 3, 2, 2, vec![0; 3], vec![1.0]).is_err());
        assert!(QuantizedWeights::<f32>::new(1, 2, 5, 2, vec![0; 2], vec![1.0]).is_err());
    }

    #[test]
    fn dequantize_is_injective_for_nonzero_scale() {
        for bits in 1..=4u32 {
            let vals: Vec<f32> = (0..(1u8 << bits)).map(|q| single(bits, q, -0.37)).collect();
            for i in 0..vals.len() {
                for j in i + 1..vals.len() {
                    assert_ne!(vals[i], vals[j]);
                }
            }
        }
    }

    #[test]
    fn constant_matrix_is_exact() {
        for bits in 1..=4 {
            let w = Matrix::<f32>::from_fn(3, 64, |_, _| 1.25).unwrap();
            let qw = quantize_rtn(&w, bits, 32).unwrap();
            assert_eq!(dequantize(&qw), w, "bits={bits}");
        }
    }

    #[test]
    fn zero_matrix_gets_zero_scales() {
        let w = Matrix::<f32>::zeros(2, 64);
        let qw = quantize_rtn(&w, 4, 32).unwrap();
        assert!(qw.scales().iter().all(|&s| s == 0.0));
        assert_eq!(dequantize(&qw), w);
    }

    #[test]
    fn codes_are_round_to_nearest_of_chosen_scale() {
        let w = Matrix::<f64>::from_fn(4, 64, |r, c| ((r * 131 + c * 17) % 23) as f64 / 7.0 - 1.5).unwrap();
        let qw = quantize_rtn(&w, 3, 32).unwrap();
        for r in 0..4 {
            for c in 0..64 {
                let s = qw.scale(r, c / 32);
                let want = (w.get(r, c) / s).round().clamp(-4.0, 3.0) as i32 + 4;
                assert_eq!(qw.q(r, c) as i32, want);
            }
        }
    }

    #[test]
    fn pad_k_appends_zero_contributions() {
        let qw = QuantizedWeights::<f32>::new(2, 4, 2, 4, vec![0, 1, 2, 3, 3, 2, 1, 0], vec![1.0, 2.0]).unwrap();
        let padded = qw.pad_k(8).unwrap();
        assert_eq!(padded.k(), 8);
        let d = dequantize(&padded);
        assert_eq!(&d.row(0)[..4], &[-2.0, -1.0, 0.0, 1.0]);
        assert!(d.row(0)[4..].iter().all(|&v| v == 0.0));
        assert_eq!(padded.scale(1, 1), 0.0);
    }
}
