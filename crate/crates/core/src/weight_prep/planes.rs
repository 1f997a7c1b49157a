use crate::error::{Error, Result};
use crate::quant::QuantizedWeights;
use crate::scalar::Scalar;

/// One bit position of a weight matrix, with `g` consecutive bits along K packed
/// into a lookup index (`bit j` of the index is the weight at `kg * g + j`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    pub m: usize,
    pub k_groups: usize,
    pub g: usize,
    /// Which weight bit this plane holds.
    pub bit: u32,
    /// Row-major `m x k_groups` indices, each `< 2^g`.
    pub indices: Vec<u8>,
}

impl BitPlane {
    #[inline]
    pub fn index(&self, m: usize, kg: usize) -> u8 {
        self.indices[m * self.k_groups + kg]
    }

    /// Single weight bit at `(m, k)`.
    #[inline]
    pub fn bit_at(&self, m: usize, k: usize) -> u8 {
        (self.index(m, k / self.g) >> (k % self.g)) & 1
    }
}

pub(crate) fn check_g(g: usize) -> Result<()> {
    if !(1..=8).contains(&g) {
        return Err(Error::param(format!("g must be in [1, 8], got {g}")));
    }
    Ok(())
}

/// Splits every code into its bit planes and groups `g` bits along K per index.
pub fn decompose_bits<T: Scalar>(qw: &QuantizedWeights<T>, g: usize) -> Result<Vec<BitPlane>> {
    check_g(g)?;
    let (m, k) = (qw.m(), qw.k());
    if k % g != 0 {
        return Err(Error::layout("k", format!("k {k} is not a multiple of g {g}; pad first")));
    }
    let k_groups = k / g;
    let planes = (0..qw.bits())
        .map(|bit| {
            let mut indices = vec![0u8; m * k_groups];
            for r in 0..m {
                for (kg, slot) in indices[r * k_groups..(r + 1) * k_groups].iter_mut().enumerate() {
                    let mut idx = 0u8;
                    for j in 0..g {
                        idx |= ((qw.q(r, kg * g + j) >> bit) & 1) << j;
                    }
                    *slot = idx;
                }
            }
            BitPlane {
                m,
                k_groups,
                g,
                bit,
                indices,
            }
        })
        .collect();
    Ok(planes)
}
