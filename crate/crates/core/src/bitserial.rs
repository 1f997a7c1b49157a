//! Bit-serial linear transformation constants.
//!
//! Bits `v in {0, 1}` are remapped to `f(v) = s0 + (s1 - s0) v` with `s0 = -1`,
//! `s1 = +1`, so an unsigned code reconstructs as
//! `q = sum_i alpha_i 2^i f(bit_i(q)) + sum_i beta_i 2^i`.

use crate::error::Result;
use crate::quant::check_bits;

pub const S0: f64 = -1.0;
pub const S1: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BitSerialParams {
    pub bits: u32,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub combined_bias: f64,
}

impl BitSerialParams {
    /// `f(v)` for a single bit.
    #[inline]
    pub fn transform(v: u8) -> f64 {
        S0 + (S1 - S0) * v as f64
    }

    /// `alpha * f(v) + beta` for bit position `i`; equals `v` exactly.
    pub fn invert(&self, i: usize, transformed: f64) -> f64 {
        self.alpha[i] * transformed + self.beta[i]
    }

    /// Reassembles an unsigned code from its transformed bits.
    pub fn reconstruct(&self, code: u32) -> f64 {
        let mut acc = self.combined_bias;
        for i in 0..self.bits as usize {
            let bit = ((code >> i) & 1) as u8;
            acc += self.alpha[i] * (1u32 << i) as f64 * Self::transform(bit);
        }
        acc
    }
}

pub fn bit_serial_params(bits: u32) -> Result<BitSerialParams> {
    check_bits(bits)?;
    // v = alpha f(v) + beta with f(v) = alpha' v + beta', alpha' = s1 - s0, beta' = s0.
    let alpha_prime = S1 - S0;
    let beta_prime = S0;
    let alpha = 1.0 / alpha_prime;
    let beta = -beta_prime / alpha_prime;
    let n = bits as usize;
    let combined_bias = (0..n).map(|i| beta * (1u32 << i) as f64).sum();
    Ok(BitSerialParams {
        bits,
        alpha: vec![alpha; n],
        beta: vec![beta; n],
        combined_bias,
    })
}
