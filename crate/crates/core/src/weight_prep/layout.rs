//! Index packing, byte interleaving, and tile permutation.
//!
//! Indices are stored in fields of `index_width(g)` bits (the next power of two
//! at or above `g`), so `8 / width` indices share a byte. Within each block of
//! `per_byte * lanes` consecutive indices, field `s` of byte `j` holds index
//! `s * lanes + j`: unpacking a `lanes`-byte load with one shift and one mask per
//! field yields consecutive runs of `lanes` indices in stream order.
//!
//! The stream order for one M-block stripe (`m_tile` rows, all of K) is
//! K-tile, then lane block within the tile, then k-group, then lane.

use crate::error::{Error, Result};
use crate::tile::TileConfig;

use super::planes::BitPlane;

/// Bump when the byte layout or stream order changes.
pub const LAYOUT_VERSION: u32 = 1;

pub fn index_width(g: usize) -> usize {
    g.next_power_of_two()
}

pub fn indices_per_byte(g: usize) -> usize {
    8 / index_width(g)
}

/// Packs `indices` (each `< 2^g`) into interleaved bytes.
pub fn interleave(indices: &[u8], g: usize, lanes: usize) -> Result<Vec<u8>> {
    let per_byte = indices_per_byte(g);
    let block = per_byte * lanes;
    if lanes == 0 || indices.len() % block != 0 {
        return Err(Error::layout(
            "lanes",
            format!("{} indices do not split into blocks of {block}", indices.len()),
        ));
    }
    let width = index_width(g);
    let mut out = vec![0u8; indices.len() / per_byte];
    for (src, dst) in indices.chunks_exact(block).zip(out.chunks_exact_mut(lanes)) {
        for (j, byte) in dst.iter_mut().enumerate() {
            let mut b = 0u8;
            for s in 0..per_byte {
                b |= src[s * lanes + j] << (s * width);
            }
            *byte = b;
        }
    }
    Ok(out)
}

/// Inverse of [`interleave`].
pub fn deinterleave(bytes: &[u8], g: usize, lanes: usize) -> Result<Vec<u8>> {
    if lanes == 0 || bytes.len() % lanes != 0 {
        return Err(Error::layout(
            "lanes",
            format!("{} bytes do not split into blocks of {lanes}", bytes.len()),
        ));
    }
    let per_byte = indices_per_byte(g);
    let width = index_width(g);
    let mask = if width == 8 { 0xff } else { (1u8 << width) - 1 };
    let mut out = vec![0u8; bytes.len() * per_byte];
    for (src, dst) in bytes.chunks_exact(lanes).zip(out.chunks_exact_mut(per_byte * lanes)) {
        for s in 0..per_byte {
            for j in 0..lanes {
                dst[s * lanes + j] = (src[j] >> (s * width)) & mask;
            }
        }
    }
    Ok(out)
}

/// Indices per M-block stripe.
pub fn stripe_indices(tile: &TileConfig, k_groups: usize) -> usize {
    tile.m_tile * k_groups
}

/// Checks that `(m, k_groups)` can be laid out with `tile`.
pub fn check_layout(tile: &TileConfig, m: usize, k_groups: usize) -> Result<()> {
    tile.validate()?;
    if m % tile.m_tile != 0 {
        return Err(Error::layout(
            "m",
            format!("M {m} is not a multiple of m_tile {}", tile.m_tile),
        ));
    }
    let kgt = tile.k_groups();
    if k_groups % kgt != 0 {
        return Err(Error::layout(
            "k",
            format!(
                "K/g {k_groups} is not a multiple of k_tile/g {kgt} (K = {})",
                k_groups * tile.g
            ),
        ));
    }
    let block = indices_per_byte(tile.g) * tile.lanes;
    if stripe_indices(tile, k_groups) % block != 0 {
        return Err(Error::layout(
            "stripe",
            format!(
                "m_tile x K/g = {} indices is not a multiple of {block} (indices per byte x lanes)",
                stripe_indices(tile, k_groups)
            ),
        ));
    }
    Ok(())
}

/// Reorders one plane into tile visit order, one M-block stripe after another.
pub fn permute(plane: &BitPlane, tile: &TileConfig) -> Result<Vec<u8>> {
    check_layout(tile, plane.m, plane.k_groups)?;
    let kgt = tile.k_groups();
    let mut out = Vec::with_capacity(plane.indices.len());
    for mb in 0..plane.m / tile.m_tile {
        for kt in 0..plane.k_groups / kgt {
            for lb in 0..tile.m_tile / tile.lanes {
                for kg in 0..kgt {
                    let col = kt * kgt + kg;
                    let row0 = mb * tile.m_tile + lb * tile.lanes;
                    out.extend((0..tile.lanes).map(|l| plane.index(row0 + l, col)));
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`permute`].
pub fn unpermute(
    stream: &[u8],
    m: usize,
    k_groups: usize,
    tile: &TileConfig,
) -> Result<Vec<u8>> {
    check_layout(tile, m, k_groups)?;
    if stream.len() != m * k_groups {
        return Err(Error::shape(format!(
            "stream holds {} indices, expected {}",
            stream.len(),
            m * k_groups
        )));
    }
    let kgt = tile.k_groups();
    let mut out = vec![0u8; m * k_groups];
    let mut it = stream.iter();
    for mb in 0..m / tile.m_tile {
        for kt in 0..k_groups / kgt {
            for lb in 0..tile.m_tile / tile.lanes {
                for kg in 0..kgt {
                    let col = kt * kgt + kg;
                    let row0 = mb * tile.m_tile + lb * tile.lanes;
                    for l in 0..tile.lanes {
                        out[(row0 + l) * k_groups + col] = *it.next().unwrap();
                    }
                }
            }
        }
    }
    Ok(out)
}
