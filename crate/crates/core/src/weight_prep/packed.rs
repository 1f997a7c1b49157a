use crate::error::{Error, Result};
use crate::quant::QuantizedWeights;
use crate::scalar::Scalar;
use crate::tile::TileConfig;

use super::layout::{self, LAYOUT_VERSION};
use super::planes::{decompose_bits, BitPlane};

/// Kernel-side weight operand: one interleaved, tile-ordered byte buffer per bit.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedWeights<T> {
    pub(crate) m: usize,
    pub(crate) k: usize,
    pub(crate) bits: u32,
    pub(crate) group_size: usize,
    pub(crate) tile: TileConfig,
    pub(crate) planes: Vec<Vec<u8>>,
    pub(crate) scales: Vec<T>,
    /// `scales` reordered per M-block as `[group][row in block]`; derived, not serialized.
    pub(crate) block_scales: Vec<T>,
    pub(crate) layout_version: u32,
}

impl<T: Scalar> PackedWeights<T> {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn g(&self) -> usize {
        self.tile.g
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn tile(&self) -> &TileConfig {
        &self.tile
    }

    pub fn layout_version(&self) -> u32 {
        self.layout_version
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        &self.planes
    }

    /// Row-major `m x k/group_size`.
    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    pub fn k_groups(&self) -> usize {
        self.k / self.tile.g
    }

    /// Bytes per plane buffer.
    pub fn plane_bytes(&self) -> usize {
        plane_bytes(self.m, self.k, self.tile.g)
    }

    /// Bytes of one M-block stripe within a plane.
    pub fn stripe_bytes(&self) -> usize {
        layout::stripe_indices(&self.tile, self.k_groups()) / layout::indices_per_byte(self.tile.g)
    }

    pub fn payload_bytes(&self) -> usize {
        self.plane_bytes() * self.bits as usize
    }

    /// Scales of M-block `mb` for quantization group `gq`, one per row of the block.
    #[inline]
    pub(crate) fn block_scales(&self, mb: usize, gq: usize) -> &[T] {
        let groups = self.k / self.group_size;
        let start = (mb * groups + gq) * self.tile.m_tile;
        &self.block_scales[start..start + self.tile.m_tile]
    }

    /// Tiles per plane.
    pub fn tile_count(&self) -> usize {
        (self.m / self.tile.m_tile) * (self.k / self.tile.k_tile)
    }
}

pub(crate) fn reorder_scales<T: Scalar>(
    m: usize,
    k: usize,
    group_size: usize,
    m_tile: usize,
    scales: &[T],
) -> Vec<T> {
    let groups = k / group_size;
    let mut out = Vec::with_capacity(scales.len());
    for mb in 0..m / m_tile {
        for gq in 0..groups {
            out.extend((0..m_tile).map(|r| scales[(mb * m_tile + r) * groups + gq]));
        }
    }
    out
}

pub(crate) fn plane_bytes(m: usize, k: usize, g: usize) -> usize {
    m * (k / g) / layout::indices_per_byte(g)
}

/// Permutes and interleaves bit planes for `tile`; scales are carried through unchanged.
pub fn pack_and_permute<T: Scalar>(
    planes: &[BitPlane],
    tile: &TileConfig,
    scales: Vec<T>,
    group_size: usize,
) -> Result<PackedWeights<T>> {
    let first = planes.first().ok_or_else(|| Error::param("no bit planes"))?;
    let (m, k_groups, g) = (first.m, first.k_groups, first.g);
    if g != tile.g {
        return Err(Error::ConfigMismatch(format!("planes use g={g}, tile uses g={}", tile.g)));
    }
    if planes.len() > crate::quant::MAX_BITS as usize {
        return Err(Error::param(format!("{} planes exceeds max bits", planes.len())));
    }
    for (i, p) in planes.iter().enumerate() {
        if p.m != m || p.k_groups != k_groups || p.g != g || p.bit != i as u32 {
            return Err(Error::shape(format!("plane {i} disagrees with plane 0")));
        }
    }
    let k = k_groups * g;
    if group_size == 0 || k % group_size != 0 {
        return Err(Error::param(format!("k {k} not a multiple of group_size {group_size}")));
    }
    if scales.len() != m * (k / group_size) {
        return Err(Error::shape(format!("expected {} scales, got {}", m * (k / group_size), scales.len())));
    }
    layout::check_layout(tile, m, k_groups)?;
    let buffers = planes
        .iter()
        .map(|p| layout::interleave(&layout::permute(p, tile)?, g, tile.lanes))
        .collect::<Result<Vec<_>>>()?;
    let block_scales = reorder_scales(m, k, group_size, tile.m_tile, &scales);
    Ok(PackedWeights {
        m,
        k,
        bits: planes.len() as u32,
        group_size,
        tile: *tile,
        planes: buffers,
        scales,
        block_scales,
        layout_version: LAYOUT_VERSION,
    })
}

/// Offline pipeline from quantized weights to the kernel operand.
///
/// K is padded with zero-contribution codes up to a multiple of both `k_tile`
/// and the quantization group size.
pub fn prepack<T: Scalar>(qw: &QuantizedWeights<T>, tile: &TileConfig) -> Result<PackedWeights<T>> {
    tile.validate()?;
    let qw = qw.pad_k(pad_quantum(tile, qw.group_size()))?;
    let planes = decompose_bits(&qw, tile.g)?;
    pack_and_permute(&planes, tile, qw.scales().to_vec(), qw.group_size())
}

/// K is padded to a multiple of this value by [`prepack`].
pub fn pad_quantum(tile: &TileConfig, group_size: usize) -> usize {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    tile.k_tile / gcd(tile.k_tile, group_size) * group_size
}

/// Recovers the row-major bit planes from a packed operand.
pub fn unpack_planes<T: Scalar>(pw: &PackedWeights<T>) -> Result<Vec<BitPlane>> {
    pw.planes
        .iter()
        .enumerate()
        .map(|(bit, bytes)| {
            let stream = layout::deinterleave(bytes, pw.tile.g, pw.tile.lanes)?;
            let indices = layout::unpermute(&stream, pw.m, pw.k_groups(), &pw.tile)?;
            Ok(BitPlane {
                m: pw.m,
                k_groups: pw.k_groups(),
                g: pw.tile.g,
                bit: bit as u32,
                indices,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_qw(m: usize, k: usize, bits: u32, seed: u64) -> QuantizedWeights<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = (0..m * k).map(|_| rng.gen_range(0..(1u8 << bits))).collect();
        let s = (0..m * k / 32).map(|_| rng.gen_range(0.1f32..1.0)).collect();
        QuantizedWeights::new(m, k, bits, 32, q, s).unwrap()
    }

    #[test]
    fn random_64x64_round_trips() {
        let qw = random_qw(64, 64, 2, 7);
        let tile = TileConfig::new(1, 16, 16, 4, 16).unwrap();
        let planes = decompose_bits(&qw, 4).unwrap();
        let pw = pack_and_permute(&planes, &tile, qw.scales().to_vec(), 32).unwrap();
        assert_eq!(pw.payload_bytes(), 2 * 64 * 64 / 4 / 2);
        assert_eq!(unpack_planes(&pw).unwrap(), planes);
    }

    #[test]
    fn payload_formula() {
        for bits in 1..=4 {
            let qw = random_qw(32, 64, bits, bits as u64);
            let pw = prepack(&qw, &TileConfig::new(1, 16, 32, 4, 16).unwrap()).unwrap();
            assert_eq!(pw.payload_bytes(), bits as usize * 32 * 64 / 4 / 2);
            assert!(pw.planes().iter().all(|p| p.len() == pw.plane_bytes()));
        }
    }

    #[test]
    fn prepack_pads_k() {
        let qw = random_qw(16, 32, 3, 1);
        let pw = prepack(&qw, &TileConfig::new(1, 16, 64, 4, 16).unwrap()).unwrap();
        assert_eq!(pw.k(), 64);
        let planes = unpack_planes(&pw).unwrap();
        // Padded codes are 2^(bits-1) = 0b100.
        for r in 0..16 {
            for k in 32..64 {
                let code: u32 = planes.iter().map(|p| (p.bit_at(r, k) as u32) << p.bit).sum();
                assert_eq!(code, 4);
            }
        }
    }

    #[test]
    fn mismatched_divisibility_is_layout_error() {
        let qw = random_qw(24, 64, 2, 3);
        let err = prepack(&qw, &TileConfig::new(1, 16, 16, 4, 16).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Layout { dimension: "m", .. }));
    }
}
