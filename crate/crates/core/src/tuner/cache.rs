//! Line-oriented tune cache.
//!
//! ```text
//! bitlut-tune-cache 1
//! <machine_id> <M> <K> <bits> <g> <variant> <n_tile> <m_tile> <k_tile> <lanes> <throughput> <timestamp>
//! ```
//!
//! One record per key; later records replace earlier ones. Saving writes a
//! temporary file next to the target and renames it over the old one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{TuneKey, TuneResult};
use crate::error::{Error, Result};
use crate::kernel::{group_accumulation_bound, KernelVariant};
use crate::tile::TileConfig;

pub const CACHE_VERSION: u32 = 1;
const HEADER: &str = "bitlut-tune-cache";

#[derive(Debug, Clone)]
pub struct TuneCache {
    path: PathBuf,
    entries: Vec<TuneResult>,
}

impl TuneCache {
    /// Reads `path`, or starts empty if it does not exist.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => parse(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(TuneCache { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[TuneResult] {
        &self.entries
    }

    pub fn get(&self, key: &TuneKey) -> Option<&TuneResult> {
        self.entries.iter().find(|e| &e.key == key)
    }

    pub fn insert(&mut self, result: TuneResult) {
        self.entries.retain(|e| e.key != result.key);
        self.entries.push(result);
    }

    pub fn save(&self) -> Result<()> {
        let dir = match self.path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(render(&self.entries).as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

fn render(entries: &[TuneResult]) -> String {
    let mut s = format!("{HEADER} {CACHE_VERSION}\n");
    for e in entries {
        let (k, c) = (&e.key, &e.cfg);
        s += &format!(
            "{} {} {} {} {} {} {} {} {} {} {:e} {}\n",
            k.machine_id, k.m, k.k, k.bits, k.g, k.variant, c.n_tile, c.m_tile, c.k_tile, c.lanes, e.throughput, e.timestamp
        );
    }
    s
}

fn bad(line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Input(format!("tune cache line {line}: {detail}"))
}

fn parse(text: &str) -> Result<Vec<TuneResult>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    match header.split_whitespace().collect::<Vec<_>>()[..] {
        [HEADER, v] if v == CACHE_VERSION.to_string() => {}
        _ => return Err(bad(1, format!("expected header `{HEADER} {CACHE_VERSION}`"))),
    }
    let mut out: Vec<TuneResult> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 12 {
            return Err(bad(n, format!("expected 12 fields, found {}", f.len())));
        }
        let num = |j: usize| f[j].parse::<usize>().map_err(|e| bad(n, format!("field {}: {e}", j + 1)));
        let key = TuneKey {
            machine_id: f[0].to_string(),
            m: num(1)?,
            k: num(2)?,
            bits: num(3)? as u32,
            g: num(4)?,
            variant: f[5].parse::<KernelVariant>().map_err(|e| bad(n, e))?,
        };
        let cfg = TileConfig::new(num(6)?, num(7)?, num(8)?, key.g, num(9)?).map_err(|e| bad(n, e))?;
        crate::quant::check_bits(key.bits).map_err(|e| bad(n, e))?;
        if key.variant.quantized_tables()
            && group_accumulation_bound(crate::quant::DEFAULT_GROUP_SIZE, key.g, key.bits) > i32::MAX as u64
        {
            return Err(bad(n, "config violates the accumulation bound"));
        }
        let throughput = f[10].parse::<f64>().map_err(|e| bad(n, e))?;
        let timestamp = f[11].parse::<u64>().map_err(|e| bad(n, e))?;
        out.retain(|e| e.key != key);
        out.push(TuneResult {
            key,
            cfg,
            throughput,
            timestamp,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(m: usize, tp: f64) -> TuneResult {
        TuneResult {
            key: TuneKey {
                m,
                k: 256,
                bits: 4,
                g: 4,
                variant: KernelVariant::VectorQuantized,
                machine_id: "abc".into(),
            },
            cfg: TileConfig::new(4, 64, 128, 4, 16).unwrap(),
            throughput: tp,
            timestamp: 7,
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tune.txt");
        let mut c = TuneCache::open(&path).unwrap();
        assert!(c.entries().is_empty());
        c.insert(result(64, 1.5e9));
        c.insert(result(128, 2.0e9));
        c.insert(result(64, 3.0e9));
        c.save().unwrap();
        let back = TuneCache::open(&path).unwrap();
        assert_eq!(back.entries().len(), 2);
        assert_eq!(back.get(&result(64, 0.0).key).unwrap(), &result(64, 3.0e9));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse("").is_err());
        assert!(parse("bitlut-tune-cache 2\n").is_err());
        assert!(parse("bitlut-tune-cache 1\nabc 1 2\n").is_err());
        // m_tile not a multiple of lanes.
        assert!(parse("bitlut-tune-cache 1\nabc 64 256 4 4 vector-q8 1 24 64 16 1e9 0\n").is_err());
        assert!(parse("bitlut-tune-cache 1\nabc 64 256 4 4 simd 1 32 64 16 1e9 0\n").is_err());
        assert_eq!(parse("bitlut-tune-cache 1\n\n").unwrap().len(), 0);
    }

    #[test]
    fn text_is_stable() {
        assert_eq!(
            render(&[result(64, 1.5e9)]),
            "bitlut-tune-cache 1\nabc 64 256 4 4 vector-q8 4 64 128 16 1.5e9 7\n"
        );
    }
}
