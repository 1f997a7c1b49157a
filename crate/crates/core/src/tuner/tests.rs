use std::collections::HashMap;

use proptest::prelude::*;

use super::*;

/// Returns fixed timings per config and counts calls.
struct FakeTimer {
    times: HashMap<(usize, usize, usize), Duration>,
    default: Duration,
    calls: usize,
}

impl FakeTimer {
    fn flat(d: Duration) -> Self {
        FakeTimer {
            times: HashMap::new(),
            default: d,
            calls: 0,
        }
    }
}

impl Timer for FakeTimer {
    fn time(&mut self, cfg: &TileConfig) -> Result<Duration> {
        self.calls += 1;
        Ok(*self.times.get(&(cfg.n_tile, cfg.m_tile, cfg.k_tile)).unwrap_or(&self.default))
    }
}

#[test]
fn small_shape_enumeration() {
    let cfgs = enumerate_configs(16, 16, 4, 4, &SearchSpace::default()).unwrap();
    let mut got: Vec<(usize, usize)> = cfgs.iter().map(|c| (c.m_tile, c.k_tile)).collect();
    got.dedup();
    assert_eq!(got, vec![(16, 4), (16, 8), (16, 16)]);
    assert_eq!(cfgs.len(), 9);
}

#[test]
fn zero_budget_is_an_error() {
    let space = SearchSpace {
        scratch_bytes: 0,
        ..SearchSpace::default()
    };
    let err = enumerate_configs(64, 64, 4, 4, &space).unwrap_err();
    assert_eq!(err.code(), "E_TUNE");
}

#[test]
fn budget_limits_working_set() {
    let space = SearchSpace {
        scratch_bytes: 512,
        ..SearchSpace::default()
    };
    for c in enumerate_configs(256, 1024, 4, 4, &space).unwrap() {
        assert!(c.lut_working_set_bytes() <= 512);
    }
}

proptest! {
    #[test]
    fn emitted_configs_are_valid(m_exp in 4u32..10, k_exp in 2u32..11, g in 1usize..=8, bits in 1u32..=4) {
        let (m, k) = (1usize << m_exp, (1usize << k_exp) * g);
        if let Ok(cfgs) = enumerate_configs(m, k, bits, g, &SearchSpace::default()) {
            for c in cfgs {
                prop_assert!(c.validate().is_ok());
                prop_assert!(c.m_tile.is_power_of_two() && c.m_tile >= 16 && c.m_tile <= MAX_TILE);
                prop_assert!(c.k_tile >= g && c.k_tile <= MAX_TILE && c.k_tile % g == 0);
                prop_assert!(N_TILES.contains(&c.n_tile));
                prop_assert_eq!(m % c.m_tile, 0);
                prop_assert_eq!(k % c.k_tile, 0);
                prop_assert!(check_layout(&c, m, k / g).is_ok());
            }
        }
    }
}

#[test]
fn selection_prefers_speed_then_small_working_set_then_small_m_tile() {
    let c = |n, m, k| TileConfig::new(n, m, k, 4, 16).unwrap();
    let ms = Duration::from_millis;
    assert_eq!(select(&[(c(1, 16, 16), ms(3)), (c(1, 32, 16), ms(2))]).unwrap().0, c(1, 32, 16));
    assert_eq!(select(&[(c(4, 16, 16), ms(2)), (c(1, 32, 16), ms(2))]).unwrap().0, c(1, 32, 16));
    assert_eq!(select(&[(c(1, 64, 16), ms(2)), (c(1, 32, 16), ms(2))]).unwrap().0, c(1, 32, 16));
    // Order of presentation does not matter.
    let a = [(c(1, 64, 32), ms(5)), (c(1, 32, 32), ms(5)), (c(8, 16, 4), ms(5))];
    let mut b = a;
    b.reverse();
    assert_eq!(select(&a), select(&b));
    assert!(select(&[]).is_none());
}

#[test]
fn measure_uses_minimum_repetitions() {
    let mut t = FakeTimer::flat(Duration::from_micros(10));
    let cfg = TileConfig::default();
    measure(&mut t, &cfg, 0, 0).unwrap();
    assert_eq!(t.calls, MIN_WARMUPS + MIN_RUNS);
}

#[test]
fn single_candidate_is_returned() {
    // M = lanes = 16 and K = 16 with k_tile fixed by a tiny budget.
    let mut req = TuneRequest::new(16, 16, 2, KernelVariant::VectorQuantized);
    req.space.scratch_bytes = 8;
    let cands = enumerate_configs(16, 16, 2, 4, &req.space).unwrap();
    assert_eq!(cands.len(), 1);
    let r = tune_with(&req, &mut FakeTimer::flat(Duration::from_secs(1)), None).unwrap();
    assert_eq!(r.cfg, cands[0]);
}

#[test]
fn fastest_fake_config_wins() {
    let req = TuneRequest::new(128, 256, 4, KernelVariant::VectorQuantized);
    let mut t = FakeTimer::flat(Duration::from_millis(10));
    t.times.insert((4, 64, 128), Duration::from_millis(1));
    let r = tune_with(&req, &mut t, None).unwrap();
    assert_eq!((r.cfg.n_tile, r.cfg.m_tile, r.cfg.k_tile), (4, 64, 128));
    assert!((r.throughput - req.weight_bytes() / 1e-3).abs() < 1.0);
}

#[test]
fn cache_hit_skips_timing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache");
    let req = TuneRequest::new(64, 128, 3, KernelVariant::ScalarQuantized);
    let mut cache = TuneCache::open(&path).unwrap();
    let mut t = FakeTimer::flat(Duration::from_millis(1));
    let first = tune_with(&req, &mut t, Some(&mut cache)).unwrap();
    assert!(t.calls > 0);
    let mut reopened = TuneCache::open(&path).unwrap();
    let mut t2 = FakeTimer::flat(Duration::from_millis(1));
    let second = tune_with(&req, &mut t2, Some(&mut reopened)).unwrap();
    assert_eq!(t2.calls, 0);
    assert_eq!(first.cfg, second.cfg);
    assert_eq!(first.key, second.key);
}

#[test]
fn rejected_configs_surface_reasons() {
    struct Failing;
    impl Timer for Failing {
        fn time(&mut self, _: &TileConfig) -> Result<Duration> {
            Err(Error::param("boom"))
        }
    }
    let req = TuneRequest::new(64, 64, 4, KernelVariant::VectorQuantized);
    let err = tune_with(&req, &mut Failing, None).unwrap_err();
    assert_eq!(err.code(), "E_TUNE");
    assert!(err.to_string().contains("boom"));
}

#[test]
fn real_timer_runs_the_kernel() {
    let mut req = TuneRequest::new(64, 128, 4, KernelVariant::VectorQuantized);
    req.space.scratch_bytes = 64;
    let r = tune(&req, None).unwrap();
    assert!(r.throughput > 0.0);
    assert!(r.cfg.lut_working_set_bytes() <= 64);
}

#[test]
fn machine_id_is_stable_and_lane_dependent() {
    assert_eq!(machine_id(16), machine_id(16));
    assert_ne!(machine_id(16), machine_id(32));
    assert_eq!(machine_id(16).len(), 16);
}
