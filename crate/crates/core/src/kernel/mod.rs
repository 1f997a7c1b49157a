//! Lookup-accumulate mpGEMV/mpGEMM over packed weights.
//!
//! Loop nest per activation block of `n_tile` rows: tables for every K-block
//! are built once, then M-blocks are visited outermost (and split across
//! workers), K-blocks next, `lanes`-wide groups of output channels, then the
//! k-groups of the tile. Partial sums are staged per quantization group and
//! folded into the output as
//! `R[m] += scale[m][gq] * (sum_i 2^(i-1) P_i - rowsum[gq] / 2)`.

mod cursor;
pub mod fast_agg;
pub mod lookup;
mod quantized;
mod real;
#[cfg(target_arch = "x86_64")]
mod x86;

use std::borrow::Cow;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lut::{precompute_luts_blocked, quantize_tables, row_sums, LookupTables};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tile::TileConfig;
use crate::weight_prep::{pad_quantum, PackedWeights, LAYOUT_VERSION};

pub use fast_agg::{bias_correction, fast_aggregate, halving_tree, plane_chain_bias};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelVariant {
    /// Real-valued tables; the semantic reference for the others.
    ScalarReal,
    /// 8-bit tables, one element at a time.
    ScalarQuantized,
    /// 8-bit tables through the byte-parallel lookup primitive.
    VectorQuantized,
    /// 8-bit tables summed with rounding halving adds (approximate).
    VectorFastAggregation,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 4] = [
        KernelVariant::ScalarReal,
        KernelVariant::ScalarQuantized,
        KernelVariant::VectorQuantized,
        KernelVariant::VectorFastAggregation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelVariant::ScalarReal => "scalar-real",
            KernelVariant::ScalarQuantized => "scalar-q8",
            KernelVariant::VectorQuantized => "vector-q8",
            KernelVariant::VectorFastAggregation => "fast-agg",
        }
    }

    pub fn quantized_tables(self) -> bool {
        self != KernelVariant::ScalarReal
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::param(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOptions {
    pub variant: KernelVariant,
    pub threads: usize,
    /// Store all `2^g` entries per table instead of the mirrored half.
    /// Only the scalar-real variant accepts this.
    pub full_tables: bool,
}

impl KernelOptions {
    pub fn new(variant: KernelVariant) -> Self {
        KernelOptions {
            variant,
            threads: 1,
            full_tables: false,
        }
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn full_tables(mut self, full: bool) -> Self {
        self.full_tables = full;
        self
    }
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions::new(KernelVariant::VectorQuantized)
    }
}

/// Work counters for one call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    /// Table lookups performed (one per plane, output, row and k-group).
    pub lookups: u64,
    /// Activation blocks (`n_tile x k_tile`) turned into tables.
    pub lut_builds: u64,
    /// Largest table allocation for one activation block, in bytes.
    pub table_bytes: usize,
}

/// Per-call constants derived from the operand and config.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Plan {
    /// k-groups per quantization group.
    pub group_kg: usize,
    /// log2(group_kg), fast aggregation only.
    pub depth: u32,
}

/// Largest integer partial one quantization group can produce.
pub fn group_accumulation_bound(group_size: usize, g: usize, bits: u32) -> u64 {
    (group_size / g) as u64 * 127 * ((1u64 << bits) - 1)
}

/// Checks `cfg` against the operand and the variant's arithmetic limits.
pub fn check_config<T: Scalar>(pw: &PackedWeights<T>, cfg: &TileConfig, variant: KernelVariant) -> Result<()> {
    plan(pw, cfg, variant).map(|_| ())
}

pub(crate) fn plan<T: Scalar>(pw: &PackedWeights<T>, cfg: &TileConfig, variant: KernelVariant) -> Result<Plan> {
    cfg.validate()?;
    let t = pw.tile();
    if (cfg.m_tile, cfg.k_tile, cfg.g, cfg.lanes) != (t.m_tile, t.k_tile, t.g, t.lanes) {
        return Err(Error::ConfigMismatch(format!(
            "config (m_tile {}, k_tile {}, g {}, lanes {}) does not match packed layout (m_tile {}, k_tile {}, g {}, lanes {})",
            cfg.m_tile, cfg.k_tile, cfg.g, cfg.lanes, t.m_tile, t.k_tile, t.g, t.lanes
        )));
    }
    if pw.layout_version() != LAYOUT_VERSION {
        return Err(Error::ConfigMismatch(format!(
            "layout version {} (kernel expects {LAYOUT_VERSION})",
            pw.layout_version()
        )));
    }
    if pw.group_size() % cfg.g != 0 {
        return Err(Error::param(format!(
            "group size {} must be a multiple of g {}",
            pw.group_size(),
            cfg.g
        )));
    }
    let group_kg = pw.group_size() / cfg.g;
    if variant.quantized_tables()
        && group_accumulation_bound(pw.group_size(), cfg.g, pw.bits()) > i32::MAX as u64
    {
        return Err(Error::param(format!(
            "group of {} elements can overflow 32-bit accumulation at {} bits",
            pw.group_size(),
            pw.bits()
        )));
    }
    let mut depth = 0;
    if variant == KernelVariant::VectorFastAggregation {
        if !group_kg.is_power_of_two() {
            return Err(Error::param(format!(
                "fast aggregation needs a power-of-two number of k-groups per quantization group, got {group_kg}"
            )));
        }
        if cfg.g > 8 || (1usize << (cfg.g - 1)) > 128 {
            return Err(Error::param("fast aggregation needs 8-bit table indices"));
        }
        depth = group_kg.trailing_zeros();
    }
    Ok(Plan { group_kg, depth })
}

/// Everything a worker needs for one activation block.
pub(crate) struct BlockCtx<'a, T> {
    pub pw: &'a PackedWeights<T>,
    pub plan: Plan,
    pub n_rows: usize,
    pub lut: &'a LookupTables<T>,
    /// `rowsum / 2`, `n_rows x groups`.
    pub half_rowsums: &'a [T],
    /// `table_scale / 2`, `n_rows x groups`; empty for real tables.
    pub half_table_scales: &'a [T],
}

impl<T: Scalar> BlockCtx<'_, T> {
    pub fn groups(&self) -> usize {
        self.pw.k() / self.pw.group_size()
    }

    /// Lookups performed for one `m_tile x k_tile` weight tile.
    pub fn tile_lookups(&self) -> u64 {
        let t = self.pw.tile();
        (self.n_rows * t.m_tile * t.k_groups() * self.pw.bits() as usize) as u64
    }
}

fn pad_activations<'a, T: Scalar>(a: &'a Matrix<T>, pw: &PackedWeights<T>) -> Result<Cow<'a, Matrix<T>>> {
    let k = pw.k();
    if a.cols() == k {
        return Ok(Cow::Borrowed(a));
    }
    let quantum = pad_quantum(pw.tile(), pw.group_size());
    if a.cols() > k || k - a.cols() >= quantum {
        return Err(Error::shape(format!("activation K {} does not match packed K {k}", a.cols())));
    }
    let padded = Matrix::from_fn(a.rows(), k, |r, c| if c < a.cols() { a.get(r, c) } else { T::zero() })?;
    Ok(Cow::Owned(padded))
}

fn split_blocks(blocks: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.clamp(1, blocks.max(1));
    let base = blocks / workers;
    let extra = blocks % workers;
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

type Worker<T> = fn(&BlockCtx<'_, T>, Range<usize>) -> (Vec<T>, u64);

fn worker_for<T: Scalar>(variant: KernelVariant) -> Worker<T> {
    match variant {
        KernelVariant::ScalarReal => real::run,
        KernelVariant::ScalarQuantized => quantized::run_scalar,
        KernelVariant::VectorQuantized => quantized::run_vector,
        KernelVariant::VectorFastAggregation => quantized::run_fast_aggregation,
    }
}

/// `A (N x K) * W^T (K x M)` with counters.
pub fn mpgemm_with_stats<T: Scalar>(
    a: &Matrix<T>,
    pw: &PackedWeights<T>,
    cfg: &TileConfig,
    opts: &KernelOptions,
) -> Result<(Matrix<T>, KernelStats)> {
    let plan = plan(pw, cfg, opts.variant)?;
    if opts.full_tables && opts.variant != KernelVariant::ScalarReal {
        return Err(Error::param(format!("{} needs mirror-consolidated tables", opts.variant)));
    }
    let a = pad_activations(a, pw)?;
    let (n, m) = (a.rows(), pw.m());
    let mut out = Matrix::zeros(n, m);
    let mut stats = KernelStats::default();
    let worker = worker_for::<T>(opts.variant);
    let half = T::of(0.5);
    let m_tile = pw.tile().m_tile;
    let ranges = split_blocks(m / m_tile, opts.threads);

    for n0 in (0..n).step_by(cfg.n_tile) {
        let rows = n0..(n0 + cfg.n_tile).min(n);
        let block = Matrix::from_fn(rows.len(), pw.k(), |r, c| a.get(n0 + r, c))?;
        let (real, builds) = precompute_luts_blocked(&block, cfg.g, cfg.k_tile, !opts.full_tables)?;
        stats.lut_builds += builds as u64;
        let lut = if opts.variant.quantized_tables() {
            quantize_tables(&real, plan.group_kg)?
        } else {
            real
        };
        stats.table_bytes = stats.table_bytes.max(lut.allocated_bytes());
        let half_rowsums: Vec<T> = row_sums(&block, pw.group_size())?
            .sums
            .into_iter()
            .map(|s| s * half)
            .collect();
        let half_table_scales: Vec<T> = lut.table_scales().iter().map(|&s| s * half).collect();
        let ctx = BlockCtx {
            pw,
            plan,
            n_rows: rows.len(),
            lut: &lut,
            half_rowsums: &half_rowsums,
            half_table_scales: &half_table_scales,
        };

        let results: Vec<(Range<usize>, (Vec<T>, u64))> = if ranges.len() == 1 {
            vec![(ranges[0].clone(), worker(&ctx, ranges[0].clone()))]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = ranges
                    .iter()
                    .map(|r| {
                        let ctx = &ctx;
                        let r = r.clone();
                        s.spawn(move || (r.clone(), worker(ctx, r)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("kernel worker panicked")).collect()
            })
        };

        for (mbs, (vals, lookups)) in results {
            stats.lookups += lookups;
            let width = mbs.len() * m_tile;
            let m0 = mbs.start * m_tile;
            for r in 0..rows.len() {
                out.row_mut(n0 + r)[m0..m0 + width].copy_from_slice(&vals[r * width..(r + 1) * width]);
            }
        }
    }
    Ok((out, stats))
}

pub fn mpgemm<T: Scalar>(
    a: &Matrix<T>,
    pw: &PackedWeights<T>,
    cfg: &TileConfig,
    opts: &KernelOptions,
) -> Result<Matrix<T>> {
    mpgemm_with_stats(a, pw, cfg, opts).map(|(m, _)| m)
}

pub fn mpgemv<T: Scalar>(
    a_row: &[T],
    pw: &PackedWeights<T>,
    cfg: &TileConfig,
    opts: &KernelOptions,
) -> Result<Vec<T>> {
    let a = Matrix::new(1, a_row.len(), a_row.to_vec())?;
    Ok(mpgemm(&a, pw, cfg, opts)?.row(0).to_vec())
}
