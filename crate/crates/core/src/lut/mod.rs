//! Online lookup-table construction from activations.
//!
//! For a run of `g` activations `a_0..a_{g-1}` the full table holds, for every
//! `idx < 2^g`, the signed sum `sum_j sign_j(idx) a_j` with `sign_j = +1` when bit
//! `j` of `idx` is set and `-1` otherwise, accumulated for `j` ascending. The
//! table is odd-symmetric (`t[idx] == -t[!idx]`), so only the half with the top
//! bit clear needs to be stored.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMode {
    Real,
    Quantized8,
}

/// Per-row tables for every k-group of an activation block.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTables<T> {
    n: usize,
    k_groups: usize,
    g: usize,
    consolidated: bool,
    mode: TableMode,
    /// Real mode: `n x k_groups x width`.
    entries: Vec<T>,
    /// Quantized mode: same shape as `entries` would have.
    qentries: Vec<i8>,
    /// Quantized mode: `n x (k_groups / scale_span)`.
    table_scales: Vec<T>,
    scale_span: usize,
}

pub(crate) fn check_g(g: usize) -> Result<()> {
    if !(1..=8).contains(&g) {
        return Err(Error::param(format!("g must be in [1, 8], got {g}")));
    }
    Ok(())
}

/// Builds the tables for one group of activations into `out` (length `2^g`, or
/// `2^(g-1)` when `half`), one doubling step per activation.
#[inline]
pub(crate) fn build_group<T: Scalar>(acts: &[T], out: &mut [T], half: bool) {
    let g = acts.len();
    out[0] = -acts[0];
    let full_steps = if half { g - 1 } else { g };
    if full_steps == 0 {
        // g == 1, half table: just the idx-0 entry.
        return;
    }
    out[1] = acts[0];
    let mut len = 2;
    for (j, &a) in acts.iter().enumerate().take(full_steps).skip(1) {
        for i in 0..len {
            let base = out[i];
            out[i] = base - a;
            out[i + len] = base + a;
        }
        len <<= 1;
        debug_assert_eq!(len, 1 << (j + 1));
    }
    if half {
        // Top bit clear for every stored entry.
        let last = acts[g - 1];
        for v in out[..len].iter_mut() {
            *v = *v - last;
        }
    }
}

impl<T: Scalar> LookupTables<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_groups(&self) -> usize {
        self.k_groups
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn mode(&self) -> TableMode {
        self.mode
    }

    pub fn is_consolidated(&self) -> bool {
        self.consolidated
    }

    pub fn scale_span(&self) -> usize {
        self.scale_span
    }

    /// Stored entries per table.
    pub fn width(&self) -> usize {
        if self.consolidated {
            1 << (self.g - 1)
        } else {
            1 << self.g
        }
    }

    /// Bytes held by table entries (scales excluded).
    pub fn allocated_bytes(&self) -> usize {
        match self.mode {
            TableMode::Real => self.entries.len() * std::mem::size_of::<T>(),
            TableMode::Quantized8 => self.qentries.len(),
        }
    }

    /// Entries of an unconsolidated table set of the same shape, in bytes.
    pub fn unconsolidated_bytes(&self) -> usize {
        let entry = match self.mode {
            TableMode::Real => std::mem::size_of::<T>(),
            TableMode::Quantized8 => 1,
        };
        self.n * self.k_groups * (1 << self.g) * entry
    }

    /// Stored entries of one table.
    pub fn table(&self, n: usize, kg: usize) -> &[T] {
        let w = self.width();
        let start = (n * self.k_groups + kg) * w;
        &self.entries[start..start + w]
    }

    /// Stored 8-bit entries of one table.
    pub fn qtable(&self, n: usize, kg: usize) -> &[i8] {
        let w = self.width();
        let start = (n * self.k_groups + kg) * w;
        &self.qentries[start..start + w]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn qentries(&self) -> &[i8] {
        &self.qentries
    }

    pub fn table_scales(&self) -> &[T] {
        &self.table_scales
    }

    /// Scale for k-group `kg` of row `n` in quantized mode.
    #[inline]
    pub fn table_scale(&self, n: usize, kg: usize) -> T {
        let blocks = self.k_groups / self.scale_span;
        self.table_scales[n * blocks + kg / self.scale_span]
    }

    /// Full-table value at `idx`, reconstructing mirrored entries. Real mode only.
    #[inline]
    pub fn value(&self, n: usize, kg: usize, idx: usize) -> T {
        debug_assert_eq!(self.mode, TableMode::Real);
        debug_assert!(idx < 1 << self.g);
        let t = self.table(n, kg);
        if self.consolidated {
            let half = 1 << (self.g - 1);
            if idx >= half {
                -t[((1 << self.g) - 1) ^ idx]
            } else {
                t[idx]
            }
        } else {
            t[idx]
        }
    }

    /// Full-table 8-bit value at `idx`. Quantized mode only.
    #[inline]
    pub fn qvalue(&self, n: usize, kg: usize, idx: usize) -> i8 {
        debug_assert_eq!(self.mode, TableMode::Quantized8);
        let t = self.qtable(n, kg);
        if self.consolidated {
            let half = 1 << (self.g - 1);
            if idx >= half {
                -t[((1 << self.g) - 1) ^ idx]
            } else {
                t[idx]
            }
        } else {
            t[idx]
        }
    }

    /// Dequantized full-table value.
    pub fn dequant_value(&self, n: usize, kg: usize, idx: usize) -> T {
        T::of_i32(self.qvalue(n, kg, idx) as i32) * self.table_scale(n, kg)
    }
}

fn check_finite<T: Scalar>(a: &[T]) -> Result<()> {
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite activation at {pos}")));
    }
    Ok(())
}

fn build<T: Scalar>(a: &Matrix<T>, g: usize, consolidated: bool) -> Result<LookupTables<T>> {
    check_g(g)?;
    let k = a.cols();
    if k % g != 0 {
        return Err(Error::shape(format!("K {k} is not a multiple of g {g}")));
    }
    let k_groups = k / g;
    let width = if consolidated { 1 << (g - 1) } else { 1 << g };
    let mut entries = vec![T::zero(); a.rows() * k_groups * width];
    for r in 0..a.rows() {
        let row = a.row(r);
        check_finite(row)?;
        let dst = &mut entries[r * k_groups * width..(r + 1) * k_groups * width];
        for (acts, out) in row.chunks_exact(g).zip(dst.chunks_exact_mut(width)) {
            build_group(acts, out, consolidated);
        }
    }
    Ok(LookupTables {
        n: a.rows(),
        k_groups,
        g,
        consolidated,
        mode: TableMode::Real,
        entries,
        qentries: Vec::new(),
        table_scales: Vec::new(),
        scale_span: 1,
    })
}

/// Full `2^g`-entry tables for one activation row.
pub fn precompute_lut<T: Scalar>(a_row: &[T], g: usize) -> Result<LookupTables<T>> {
    check_finite(a_row)?;
    let m = Matrix::new(1, a_row.len(), a_row.to_vec())?;
    build(&m, g, false)
}

/// Full tables for every row of `a`.
pub fn precompute_luts<T: Scalar>(a: &Matrix<T>, g: usize) -> Result<LookupTables<T>> {
    build(a, g, false)
}

/// Mirror-consolidated tables built directly (only the top-bit-clear half is computed).
pub fn precompute_luts_consolidated<T: Scalar>(a: &Matrix<T>, g: usize) -> Result<LookupTables<T>> {
    build(a, g, true)
}

/// Tables built one `k_tile`-wide activation block at a time, consolidated or
/// full. Returns the tables and the number of block builds performed.
pub fn precompute_luts_blocked<T: Scalar>(
    a: &Matrix<T>,
    g: usize,
    k_tile: usize,
    consolidated: bool,
) -> Result<(LookupTables<T>, usize)> {
    check_g(g)?;
    if k_tile == 0 || k_tile % g != 0 || a.cols() % k_tile != 0 {
        return Err(Error::shape(format!(
            "K {} must be a multiple of k_tile {k_tile}, itself a multiple of g {g}",
            a.cols()
        )));
    }
    let k_groups = a.cols() / g;
    let kg_block = k_tile / g;
    let width = if consolidated { 1 << (g - 1) } else { 1 << g };
    let mut entries = vec![T::zero(); a.rows() * k_groups * width];
    for r in 0..a.rows() {
        check_finite(a.row(r))?;
    }
    let mut builds = 0;
    for kb in 0..k_groups / kg_block {
        for r in 0..a.rows() {
            let acts = &a.row(r)[kb * k_tile..(kb + 1) * k_tile];
            let start = (r * k_groups + kb * kg_block) * width;
            let dst = &mut entries[start..start + kg_block * width];
            for (group, out) in acts.chunks_exact(g).zip(dst.chunks_exact_mut(width)) {
                build_group(group, out, consolidated);
            }
        }
        builds += 1;
    }
    let lut = LookupTables {
        n: a.rows(),
        k_groups,
        g,
        consolidated,
        mode: TableMode::Real,
        entries,
        qentries: Vec::new(),
        table_scales: Vec::new(),
        scale_span: 1,
    };
    Ok((lut, builds))
}

/// Drops the top-bit-set half of every table. Lossless: see [`LookupTables::value`].
pub fn mirror_consolidate<T: Scalar>(full: &LookupTables<T>) -> Result<LookupTables<T>> {
    if full.consolidated {
        return Err(Error::param("tables are already consolidated"));
    }
    if full.mode != TableMode::Real {
        return Err(Error::param("consolidate before quantizing"));
    }
    let half = 1 << (full.g - 1);
    let entries = full
        .entries
        .chunks_exact(1 << full.g)
        .flat_map(|t| t[..half].iter().copied())
        .collect();
    Ok(LookupTables {
        consolidated: true,
        entries,
        ..full.clone()
    })
}

/// Expands consolidated real tables back to full width.
pub fn reconstruct_full<T: Scalar>(half: &LookupTables<T>) -> Result<LookupTables<T>> {
    if !half.consolidated || half.mode != TableMode::Real {
        return Err(Error::param("expected consolidated real-mode tables"));
    }
    let full_w = 1 << half.g;
    let mut entries = Vec::with_capacity(half.n * half.k_groups * full_w);
    for n in 0..half.n {
        for kg in 0..half.k_groups {
            entries.extend((0..full_w).map(|idx| half.value(n, kg, idx)));
        }
    }
    Ok(LookupTables {
        consolidated: false,
        entries,
        ..half.clone()
    })
}

/// Dynamic symmetric 8-bit quantization of real tables.
///
/// One scale covers `scale_span` consecutive k-groups of a row:
/// `scale = max|entry| / 127` (1 when the block is all zero) and
/// `q = round_half_away(entry / scale)` clamped to `[-127, 127]`.
pub fn quantize_tables<T: Scalar>(lut: &LookupTables<T>, scale_span: usize) -> Result<LookupTables<T>> {
    if lut.mode != TableMode::Real {
        return Err(Error::param("tables are already quantized"));
    }
    if scale_span == 0 || lut.k_groups % scale_span != 0 {
        return Err(Error::param(format!(
            "scale span {scale_span} does not divide {} k-groups",
            lut.k_groups
        )));
    }
    let w = lut.width();
    let block = scale_span * w;
    let limit = T::of(127.0);
    let mut qentries = Vec::with_capacity(lut.entries.len());
    let mut table_scales = Vec::with_capacity(lut.entries.len() / block.max(1));
    for chunk in lut.entries.chunks_exact(block) {
        let max = chunk.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let scale = if max == T::zero() { T::one() } else { max / limit };
        table_scales.push(scale);
        qentries.extend(chunk.iter().map(|&v| {
            // Float::round rounds half away from zero.
            let q = (v / scale).round().max(-limit).min(limit);
            q.to_i32().unwrap() as i8
        }));
    }
    Ok(LookupTables {
        mode: TableMode::Quantized8,
        entries: Vec::new(),
        qentries,
        table_scales,
        scale_span,
        ..lut.clone()
    })
}

/// Per-row sums of activations over each quantization group.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSums<T> {
    pub n: usize,
    pub groups: usize,
    pub sums: Vec<T>,
}

impl<T: Scalar> RowSums<T> {
    #[inline]
    pub fn get(&self, n: usize, group: usize) -> T {
        self.sums[n * self.groups + group]
    }
}

/// Left-to-right sums of each `group_size` run of every row.
pub fn row_sums<T: Scalar>(a: &Matrix<T>, group_size: usize) -> Result<RowSums<T>> {
    if group_size == 0 || a.cols() % group_size != 0 {
        return Err(Error::shape(format!(
            "K {} is not a multiple of group size {group_size}",
            a.cols()
        )));
    }
    let groups = a.cols() / group_size;
    let mut sums = Vec::with_capacity(a.rows() * groups);
    for r in 0..a.rows() {
        for chunk in a.row(r).chunks_exact(group_size) {
            sums.push(chunk.iter().fold(T::zero(), |s, &v| s + v));
        }
    }
    Ok(RowSums {
        n: a.rows(),
        groups,
        sums,
    })
}
