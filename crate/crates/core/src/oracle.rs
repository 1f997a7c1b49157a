//! Slow reference implementations used to check the kernels.
//!
//! Nothing here reuses kernel or table-building code: tables are formed by
//! direct signed sums and GEMM is a plain triple loop.

use crate::bitserial::BitSerialParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quant::{dequantize, QuantizedWeights};
use crate::scalar::Scalar;
use crate::weight_prep::BitPlane;

/// Dequantize, then `R[n][m] = sum_k A[n][k] * W[m][k]` with k ascending.
pub fn reference_mpgemm<T: Scalar>(a: &Matrix<T>, qw: &QuantizedWeights<T>) -> Result<Matrix<T>> {
    if a.cols() != qw.k() {
        return Err(Error::shape(format!("A has {} columns, weights have K={}", a.cols(), qw.k())));
    }
    let w = dequantize(qw);
    let mut out = Matrix::zeros(a.rows(), qw.m());
    for n in 0..a.rows() {
        let a_row = a.row(n);
        for m in 0..qw.m() {
            let w_row = w.row(m);
            let mut acc = T::zero();
            for k in 0..qw.k() {
                acc = acc + a_row[k] * w_row[k];
            }
            out.set(n, m, acc);
        }
    }
    Ok(out)
}

/// Lookup-table GEMV evaluated literally: full `2^g` tables, one lookup per
/// (plane, output, k-group), then `sum_i alpha_i 2^i R_i` plus the bias term
/// `(combined_bias - 2^(bits-1)) * rowsum` per quantization group.
pub fn reference_lut_mpgemv<T: Scalar>(
    a_row: &[T],
    planes: &[BitPlane],
    params: &BitSerialParams,
    scales: &[T],
    group_size: usize,
) -> Result<Vec<T>> {
    let first = planes.first().ok_or_else(|| Error::param("no planes"))?;
    let (m, k_groups, g) = (first.m, first.k_groups, first.g);
    let k = k_groups * g;
    if a_row.len() != k {
        return Err(Error::shape(format!("activation length {} != K {k}", a_row.len())));
    }
    if planes.len() != params.bits as usize {
        return Err(Error::shape("plane count differs from bits"));
    }
    if group_size == 0 || k % group_size != 0 || group_size % g != 0 {
        return Err(Error::param("group_size must divide K and be a multiple of g"));
    }
    let groups = k / group_size;
    if scales.len() != m * groups {
        return Err(Error::shape("scale count"));
    }

    // table[kg][idx] = sum_j (+a or -a) for the g activations of k-group kg.
    let tables: Vec<Vec<T>> = (0..k_groups)
        .map(|kg| {
            (0..1usize << g)
                .map(|idx| {
                    let mut acc = T::zero();
                    for j in 0..g {
                        let a = a_row[kg * g + j];
                        acc = if (idx >> j) & 1 == 1 { acc + a } else { acc - a };
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let offset = T::of((1u32 << (params.bits - 1)) as f64);
    let bias = T::of(params.combined_bias) - offset;
    let kg_per_group = group_size / g;
    let mut out = vec![T::zero(); m];
    for (row, o) in out.iter_mut().enumerate() {
        let mut total = T::zero();
        for gq in 0..groups {
            let mut combined = T::zero();
            for (i, plane) in planes.iter().enumerate() {
                let mut r_i = T::zero();
                for kg in gq * kg_per_group..(gq + 1) * kg_per_group {
                    r_i = r_i + tables[kg][plane.index(row, kg) as usize];
                }
                combined = combined + T::of(params.alpha[i] * (1u32 << i) as f64) * r_i;
            }
            let mut rowsum = T::zero();
            for &a in &a_row[gq * group_size..(gq + 1) * group_size] {
                rowsum = rowsum + a;
            }
            total = total + scales[row * groups + gq] * (combined + bias * rowsum);
        }
        *o = total;
    }
    Ok(out)
}
