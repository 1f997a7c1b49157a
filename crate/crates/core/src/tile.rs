use crate::error::{Error, Result};

pub const DEFAULT_G: usize = 4;
pub const DEFAULT_LANES: usize = 16;

/// Loop-nest and tiling parameters shared by weight packing and the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileConfig {
    /// Activation rows per block.
    pub n_tile: usize,
    /// Output channels per block.
    pub m_tile: usize,
    /// Reduction elements per block; a multiple of `g`.
    pub k_tile: usize,
    /// Weight bits per lookup index.
    pub g: usize,
    /// Width of the byte-parallel lookup primitive.
    pub lanes: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            n_tile: 1,
            m_tile: 64,
            k_tile: 64,
            g: DEFAULT_G,
            lanes: DEFAULT_LANES,
        }
    }
}

impl TileConfig {
    pub fn new(n_tile: usize, m_tile: usize, k_tile: usize, g: usize, lanes: usize) -> Result<Self> {
        let cfg = TileConfig {
            n_tile,
            m_tile,
            k_tile,
            g,
            lanes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.g) {
            return Err(Error::param(format!("g must be in [1, 8], got {}", self.g)));
        }
        if self.n_tile == 0 || self.m_tile == 0 || self.k_tile == 0 || self.lanes == 0 {
            return Err(Error::param("tile sizes and lanes must be positive"));
        }
        if self.k_tile % self.g != 0 {
            return Err(Error::layout(
                "k_tile",
                format!("k_tile {} is not a multiple of g {}", self.k_tile, self.g),
            ));
        }
        if self.m_tile % self.lanes != 0 {
            return Err(Error::layout(
                "m_tile",
                format!("m_tile {} is not a multiple of lanes {}", self.m_tile, self.lanes),
            ));
        }
        Ok(())
    }

    /// Lookup indices per tile row along K.
    pub fn k_groups(&self) -> usize {
        self.k_tile / self.g
    }

    /// Entries per mirror-consolidated table (`2^(g-1)`).
    pub fn half_table(&self) -> usize {
        1 << (self.g - 1)
    }

    /// Consolidated LUT entries live for one `n_tile x k_tile` activation block.
    pub fn lut_working_set_entries(&self) -> usize {
        self.n_tile * self.k_groups() * self.half_table()
    }

    /// Working set in bytes with 8-bit table entries.
    pub fn lut_working_set_bytes(&self) -> usize {
        self.lut_working_set_entries()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants() {
        assert!(TileConfig::new(1, 16, 16, 4, 16).is_ok());
        assert!(matches!(
            TileConfig::new(1, 16, 10, 4, 16),
            Err(Error::Layout { dimension: "k_tile", .. })
        ));
        assert!(matches!(
            TileConfig::new(1, 24, 16, 4, 16),
            Err(Error::Layout { dimension: "m_tile", .. })
        ));
        assert!(TileConfig::new(1, 16, 16, 9, 16).is_err());
        assert!(TileConfig::new(1, 16, 16, 0, 16).is_err());
    }

    #[test]
    fn working_set() {
        let cfg = TileConfig::new(4, 32, 64, 4, 16).unwrap();
        assert_eq!(cfg.lut_working_set_entries(), 4 * 16 * 8);
    }
}
