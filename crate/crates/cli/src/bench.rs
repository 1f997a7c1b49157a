//! Kernel latency measurement and the JSON report of `bitlut bench`.

use std::time::Instant;

use bitlut::{mpgemm_with_stats, prepack, KernelOptions, KernelStats, KernelVariant, Matrix, PackedWeights, QuantizedWeights, Result, TileConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const SWEEP_BITS: [u32; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gemv,
    Gemm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub n_tile: usize,
    pub m_tile: usize,
    pub k_tile: usize,
    pub g: usize,
    pub lanes: usize,
}

impl From<&TileConfig> for Tile {
    fn from(c: &TileConfig) -> Self {
        Tile {
            n_tile: c.n_tile,
            m_tile: c.m_tile,
            k_tile: c.k_tile,
            g: c.g,
            lanes: c.lanes,
        }
    }
}

/// Median latency per bit width on one shape, measured in interleaved rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitScaling {
    pub bits: Vec<u32>,
    pub median_ms: Vec<f64>,
    /// Each median over the median at the widest bit width.
    pub ratio_to_widest: Vec<f64>,
    /// Latency never increases as bits decrease.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub shape: Shape,
    pub bits: u32,
    pub group_size: usize,
    pub variant: String,
    pub threads: usize,
    pub tile: Tile,
    pub warmups: usize,
    pub reps: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    /// Packed bit-plane bytes per second at the median latency.
    pub weight_bytes_per_s: f64,
    pub lookups: u64,
    pub lookups_per_output: u64,
    pub lut_builds: u64,
    pub table_bytes: usize,
    pub bit_scaling: Option<BitScaling>,
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Random codes with scales in [0.5, 1.5).
pub fn synthetic_weights(m: usize, k: usize, bits: u32, group_size: usize, seed: u64) -> Result<QuantizedWeights<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = (0..m * k).map(|_| rng.gen_range(0..1u8 << bits)).collect();
    let s = (0..m * (k / group_size)).map(|_| rng.gen_range(0.5f32..1.5)).collect();
    QuantizedWeights::new(m, k, bits, group_size, q, s)
}

pub fn synthetic_activations(n: usize, k: usize, seed: u64) -> Result<Matrix<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
    Matrix::from_fn(n, k, |_, _| rng.gen_range(-1.0f32..1.0))
}

fn time_once(a: &Matrix<f32>, pw: &PackedWeights<f32>, cfg: &TileConfig, opts: &KernelOptions) -> Result<(f64, KernelStats)> {
    let start = Instant::now();
    let (out, stats) = mpgemm_with_stats(a, pw, cfg, opts)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(out);
    Ok((ms, stats))
}

#[derive(Debug, Clone)]
pub struct BenchRequest {
    pub mode: Mode,
    pub n: usize,
    pub variant: KernelVariant,
    pub threads: usize,
    pub warmups: usize,
    pub reps: usize,
    pub seed: u64,
}

pub fn bench(pw: &PackedWeights<f32>, cfg: &TileConfig, req: &BenchRequest) -> Result<BenchReport> {
    let n = match req.mode {
        Mode::Gemv => 1,
        Mode::Gemm => req.n,
    };
    let a = synthetic_activations(n, pw.k(), req.seed)?;
    let opts = KernelOptions::new(req.variant).threads(req.threads);
    for _ in 0..req.warmups {
        time_once(&a, pw, cfg, &opts)?;
    }
    let mut samples = Vec::with_capacity(req.reps);
    let mut stats = KernelStats::default();
    for _ in 0..req.reps.max(1) {
        let (ms, s) = time_once(&a, pw, cfg, &opts)?;
        samples.push(ms);
        stats = s;
    }
    let med = median(&samples);
    Ok(BenchReport {
        schema_version: SCHEMA_VERSION,
        mode: req.mode,
        shape: Shape { m: pw.m(), k: pw.k(), n },
        bits: pw.bits(),
        group_size: pw.group_size(),
        variant: req.variant.name().to_string(),
        threads: req.threads,
        tile: cfg.into(),
        warmups: req.warmups,
        reps: samples.len(),
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        median_ms: med,
        samples_ms: samples,
        weight_bytes_per_s: pw.payload_bytes() as f64 / (med * 1e-3),
        lookups: stats.lookups,
        lookups_per_output: stats.lookups / (n * pw.m()) as u64,
        lut_builds: stats.lut_builds,
        table_bytes: stats.table_bytes,
        bit_scaling: None,
    })
}

/// Times synthetic weights of each width in `bits` on one shape. Rounds visit every
/// width once so slow drift on the machine affects all widths alike.
#[allow(clippy::too_many_arguments)]
pub fn bit_sweep(
    m: usize,
    k: usize,
    group_size: usize,
    bits: &[u32],
    cfg: &TileConfig,
    req: &BenchRequest,
) -> Result<BitScaling> {
    let n = match req.mode {
        Mode::Gemv => 1,
        Mode::Gemm => req.n,
    };
    let a = synthetic_activations(n, k, req.seed)?;
    let packed = bits
        .iter()
        .map(|&b| prepack(&synthetic_weights(m, k, b, group_size, req.seed + b as u64)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    let opts = KernelOptions::new(req.variant).threads(req.threads);
    for pw in &packed {
        for _ in 0..req.warmups {
            time_once(&a, pw, cfg, &opts)?;
        }
    }
    let mut samples = vec![Vec::with_capacity(req.reps); bits.len()];
    for _ in 0..req.reps.max(1) {
        for (pw, s) in packed.iter().zip(samples.iter_mut()) {
            s.push(time_once(&a, pw, cfg, &opts)?.0);
        }
    }
    let median_ms: Vec<f64> = samples.iter().map(|s| median(s)).collect();
    let widest = bits.iter().enumerate().max_by_key(|(_, &b)| b).map_or(0, |(i, _)| i);
    let mut order: Vec<usize> = (0..bits.len()).collect();
    order.sort_by_key(|&i| bits[i]);
    let monotone = order.windows(2).all(|w| median_ms[w[0]] <= median_ms[w[1]]);
    Ok(BitScaling {
        bits: bits.to_vec(),
        ratio_to_widest: median_ms.iter().map(|t| t / median_ms[widest]).collect(),
        median_ms,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn one_rep_gives_one_sample() {
        let cfg = TileConfig::default();
        let pw = prepack(&synthetic_weights(64, 128, 2, 32, 1).unwrap(), &cfg).unwrap();
        let req = BenchRequest {
            mode: Mode::Gemv,
            n: 1,
            variant: KernelVariant::VectorQuantized,
            threads: 1,
            warmups: 0,
            reps: 1,
            seed: 0,
        };
        let r = bench(&pw, &cfg, &req).unwrap();
        assert_eq!(r.samples_ms.len(), 1);
        assert_eq!(r.median_ms, r.samples_ms[0]);
        assert_eq!(r.lookups_per_output, 2 * 128 / 4);
    }
}
