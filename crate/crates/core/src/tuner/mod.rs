//! Tile-size search: enumerate legal configs, time each, keep the fastest,
//! and remember the winner per shape and machine.

mod cache;

use std::fmt;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use cache::{TuneCache, CACHE_VERSION};

use crate::error::{Error, Result};
use crate::kernel::{check_config, mpgemm, KernelOptions, KernelVariant};
use crate::matrix::Matrix;
use crate::quant::QuantizedWeights;
use crate::tile::{TileConfig, DEFAULT_LANES};
use crate::weight_prep::{check_layout, prepack};

pub const MAX_TILE: usize = 256;
pub const N_TILES: [usize; 3] = [1, 4, 8];
/// Default LUT scratch budget: a typical 32 KiB L1 data cache.
pub const DEFAULT_SCRATCH_BYTES: usize = 32 * 1024;
pub const MIN_WARMUPS: usize = 2;
pub const MIN_RUNS: usize = 5;

/// Search-space limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchSpace {
    pub lanes: usize,
    pub scratch_bytes: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lanes: DEFAULT_LANES,
            scratch_bytes: DEFAULT_SCRATCH_BYTES,
        }
    }
}

/// Power-of-two `m_tile` in `[lanes, 256]`, `k_tile = g * 2^j <= 256`, `n_tile` in
/// {1, 4, 8}, keeping configs that divide the shape, give byte-aligned
/// stripes, and whose LUT working set fits the scratch budget.
pub fn enumerate_configs(m: usize, k: usize, bits: u32, g: usize, space: &SearchSpace) -> Result<Vec<TileConfig>> {
    crate::quant::check_bits(bits)?;
    let mut out = Vec::new();
    let mut rejected = 0;
    let mut m_tile = space.lanes.next_power_of_two();
    while m_tile <= MAX_TILE {
        let mut k_tile = g;
        while k_tile <= MAX_TILE {
            for n_tile in N_TILES {
                let Ok(cfg) = TileConfig::new(n_tile, m_tile, k_tile, g, space.lanes) else {
                    continue;
                };
                if m % m_tile != 0 || k % k_tile != 0 || check_layout(&cfg, m, k / g).is_err() {
                    continue;
                }
                if cfg.lut_working_set_bytes() > space.scratch_bytes {
                    rejected += 1;
                    continue;
                }
                out.push(cfg);
            }
            k_tile *= 2;
        }
        m_tile *= 2;
    }
    if out.is_empty() {
        return Err(Error::Tuning(format!(
            "no tile config for M={m} K={k} g={g} lanes={} ({rejected} over the {} byte scratch budget)",
            space.lanes, space.scratch_bytes
        )));
    }
    Ok(out)
}

/// Cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TuneKey {
    pub m: usize,
    pub k: usize,
    pub bits: u32,
    pub g: usize,
    pub variant: KernelVariant,
    pub machine_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub key: TuneKey,
    pub cfg: TileConfig,
    /// Weight bytes processed per second.
    pub throughput: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl fmt::Display for TuneResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cfg;
        write!(
            f,
            "M={} K={} bits={} g={} variant={} machine={}: n_tile={} m_tile={} k_tile={} lanes={} ({:.3e} weight bytes/s)",
            self.key.m,
            self.key.k,
            self.key.bits,
            self.key.g,
            self.key.variant,
            self.key.machine_id,
            c.n_tile,
            c.m_tile,
            c.k_tile,
            c.lanes,
            self.throughput
        )
    }
}

/// Hex digest of the CPU brand string and lane width.
pub fn machine_id(lanes: usize) -> String {
    let mut h = Sha256::new();
    h.update(cpu_brand().as_bytes());
    h.update((lanes as u64).to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

fn cpu_brand() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|b| b.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Times one kernel call for a config.
pub trait Timer {
    fn time(&mut self, cfg: &TileConfig) -> Result<Duration>;
}

/// Runs the real kernel on synthetic weights of the requested shape.
pub struct KernelTimer {
    qw: QuantizedWeights<f32>,
    a: Matrix<f32>,
    variant: KernelVariant,
    packed: Option<(TileConfig, crate::weight_prep::PackedWeights<f32>)>,
}

impl KernelTimer {
    pub fn new(req: &TuneRequest) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let m = req.m;
        let k = req.k;
        let q = (0..m * k).map(|_| rng.gen_range(0..(1u8 << req.bits))).collect();
        let s = (0..m * (k / req.group_size)).map(|_| rng.gen_range(0.5f32..1.5)).collect();
        let qw = QuantizedWeights::new(m, k, req.bits, req.group_size, q, s)?;
        let a = Matrix::from_fn(req.n, k, |_, _| rng.gen_range(-1.0f32..1.0))?;
        Ok(KernelTimer {
            qw,
            a,
            variant: req.variant,
            packed: None,
        })
    }
}

impl Timer for KernelTimer {
    fn time(&mut self, cfg: &TileConfig) -> Result<Duration> {
        let layout = |c: &TileConfig| (c.m_tile, c.k_tile, c.g, c.lanes);
        if self.packed.as_ref().map(|(c, _)| layout(c)) != Some(layout(cfg)) {
            let pw = prepack(&self.qw, cfg)?;
            check_config(&pw, cfg, self.variant)?;
            self.packed = Some((*cfg, pw));
        }
        let (_, pw) = self.packed.as_ref().expect("packed above");
        let start = Instant::now();
        let out = mpgemm(&self.a, pw, cfg, &KernelOptions::new(self.variant))?;
        let elapsed = start.elapsed();
        std::hint::black_box(out);
        Ok(elapsed)
    }
}

#[derive(Debug, Clone)]
pub struct TuneRequest {
    pub m: usize,
    pub k: usize,
    /// Activation rows per timed call.
    pub n: usize,
    pub bits: u32,
    pub g: usize,
    pub group_size: usize,
    pub variant: KernelVariant,
    /// Stop timing further configs once this much time has been spent (0 = no limit).
    pub budget_ms: u64,
    pub warmups: usize,
    pub runs: usize,
    pub seed: u64,
    pub space: SearchSpace,
}

impl TuneRequest {
    pub fn new(m: usize, k: usize, bits: u32, variant: KernelVariant) -> Self {
        TuneRequest {
            m,
            k,
            n: 1,
            bits,
            g: crate::tile::DEFAULT_G,
            group_size: crate::quant::DEFAULT_GROUP_SIZE,
            variant,
            budget_ms: 0,
            warmups: MIN_WARMUPS,
            runs: MIN_RUNS,
            seed: 0,
            space: SearchSpace::default(),
        }
    }

    pub fn key(&self) -> TuneKey {
        TuneKey {
            m: self.m,
            k: self.k,
            bits: self.bits,
            g: self.g,
            variant: self.variant,
            machine_id: machine_id(self.space.lanes),
        }
    }

    /// Weight bytes one call streams.
    pub fn weight_bytes(&self) -> f64 {
        (self.m * self.k) as f64 * self.bits as f64 / 8.0
    }
}

/// Median of at least [`MIN_RUNS`] timings after at least [`MIN_WARMUPS`] discarded calls.
pub fn measure(timer: &mut dyn Timer, cfg: &TileConfig, warmups: usize, runs: usize) -> Result<Duration> {
    for _ in 0..warmups.max(MIN_WARMUPS) {
        timer.time(cfg)?;
    }
    let mut t: Vec<Duration> = (0..runs.max(MIN_RUNS)).map(|_| timer.time(cfg)).collect::<Result<_>>()?;
    t.sort();
    Ok(t[t.len() / 2])
}

/// Fastest config; ties go to the smaller LUT working set, then the smaller `m_tile`.
pub fn select(measured: &[(TileConfig, Duration)]) -> Option<(TileConfig, Duration)> {
    measured
        .iter()
        .min_by(|(a, ta), (b, tb)| {
            ta.cmp(tb)
                .then(a.lut_working_set_bytes().cmp(&b.lut_working_set_bytes()))
                .then(a.m_tile.cmp(&b.m_tile))
                .then((a.k_tile, a.n_tile).cmp(&(b.k_tile, b.n_tile)))
        })
        .copied()
}

/// Looks up the cache, otherwise times every candidate and records the winner.
pub fn tune(req: &TuneRequest, cache: Option<&mut TuneCache>) -> Result<TuneResult> {
    let key = req.key();
    if let Some(hit) = cache.as_ref().and_then(|c| c.get(&key)) {
        return Ok(hit.clone());
    }
    let mut timer = KernelTimer::new(req)?;
    tune_with(req, &mut timer, cache)
}

/// [`tune`] with an injected timer.
pub fn tune_with(req: &TuneRequest, timer: &mut dyn Timer, cache: Option<&mut TuneCache>) -> Result<TuneResult> {
    let key = req.key();
    if let Some(hit) = cache.as_ref().and_then(|c| c.get(&key)) {
        return Ok(hit.clone());
    }
    let candidates = enumerate_configs(req.m, req.k, req.bits, req.g, &req.space)?;
    let started = Instant::now();
    let mut measured = Vec::new();
    let mut reasons = Vec::new();
    for cfg in &candidates {
        if req.budget_ms > 0 && !measured.is_empty() && started.elapsed() >= Duration::from_millis(req.budget_ms) {
            break;
        }
        match measure(timer, cfg, req.warmups, req.runs) {
            Ok(t) => measured.push((*cfg, t)),
            Err(e) => reasons.push(format!("{cfg:?}: {e}")),
        }
    }
    let (cfg, t) = select(&measured)
        .ok_or_else(|| Error::Tuning(format!("every config was rejected: {}", reasons.join("; "))))?;
    let result = TuneResult {
        key,
        cfg,
        throughput: req.weight_bytes() / t.as_secs_f64().max(1e-12),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    if let Some(c) = cache {
        c.insert(result.clone());
        c.save()?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
