//! `LMPW` packed-weight stream. All integers little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "LMPW"
//! 4       4     u32 format version (1)
//! 8       4     u32 layout version
//! 12      4     u32 m
//! 16      4     u32 k
//! 20      4     u32 bits
//! 24      4     u32 g
//! 28      4     u32 n_tile
//! 32      4     u32 m_tile
//! 36      4     u32 k_tile
//! 40      4     u32 lanes
//! 44      4     u32 group_size
//! 48      8     u64 payload length in bytes (bits x plane bytes)
//! 56      4*S   f32 scales, row-major m x k/group_size
//! ...     P     plane payloads, bit 0 first, each m*(k/g)/(8/width(g)) bytes
//! ```

use crate::error::{Error, FormatError, Result};
use crate::scalar::Scalar;
use crate::tile::TileConfig;

use super::layout::{self, LAYOUT_VERSION};
use super::packed::{plane_bytes, reorder_scales, PackedWeights};

pub const MAGIC: [u8; 4] = *b"LMPW";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 56;

pub fn serialize<T: Scalar>(pw: &PackedWeights<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + pw.scales.len() * 4 + pw.payload_bytes());
    out.extend_from_slice(&MAGIC);
    for v in [
        FORMAT_VERSION,
        pw.layout_version,
        pw.m as u32,
        pw.k as u32,
        pw.bits,
        pw.tile.g as u32,
        pw.tile.n_tile as u32,
        pw.tile.m_tile as u32,
        pw.tile.k_tile as u32,
        pw.tile.lanes as u32,
        pw.group_size as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(pw.payload_bytes() as u64).to_le_bytes());
    for s in &pw.scales {
        out.extend_from_slice(&s.as_f32().to_le_bytes());
    }
    for p in &pw.planes {
        out.extend_from_slice(p);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn header_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format(FormatError::Header {
        field,
        detail: detail.into(),
    })
}

pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<PackedWeights<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: MAGIC,
            found: magic,
        }
        .into());
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version {
            expected: FORMAT_VERSION,
            found: version,
        }
        .into());
    }
    let layout_version = r.u32()?;
    if layout_version != LAYOUT_VERSION {
        return Err(FormatError::Version {
            expected: LAYOUT_VERSION,
            found: layout_version,
        }
        .into());
    }
    let mut fields = [0usize; 9];
    for f in fields.iter_mut() {
        *f = r.u32()? as usize;
    }
    let [m, k, bits, g, n_tile, m_tile, k_tile, lanes, group_size] = fields;
    let payload_len = r.u64()? as usize;

    if !(1..=crate::quant::MAX_BITS as usize).contains(&bits) {
        return Err(header_err("bits", format!("{bits} out of range")));
    }
    let tile = TileConfig::new(n_tile, m_tile, k_tile, g, lanes)
        .map_err(|e| header_err("tile", e.to_string()))?;
    if group_size == 0 || k % group_size != 0 || k % g != 0 {
        return Err(header_err("group_size", format!("k {k}, g {g}, group_size {group_size}")));
    }
    layout::check_layout(&tile, m, k / g).map_err(|e| header_err("m/k", e.to_string()))?;

    let n_scales = m * (k / group_size);
    let scale_bytes = r.take(n_scales * 4)?;
    let scales: Vec<T> = scale_bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    if scales.iter().any(|s| !s.is_finite()) {
        return Err(header_err("scales", "non-finite scale"));
    }

    let per_plane = plane_bytes(m, k, g);
    let expected = per_plane * bits;
    if payload_len != expected {
        return Err(FormatError::LengthMismatch {
            expected,
            found: payload_len,
        }
        .into());
    }
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(FormatError::LengthMismatch {
            expected: r.pos,
            found: bytes.len(),
        }
        .into());
    }
    let planes = payload.chunks_exact(per_plane).map(<[u8]>::to_vec).collect();
    let block_scales = reorder_scales(m, k, group_size, m_tile, &scales);
    Ok(PackedWeights {
        block_scales,
        m,
        k,
        bits: bits as u32,
        group_size,
        tile,
        planes,
        scales,
        layout_version,
    })
}
