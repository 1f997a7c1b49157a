//! 8-bit table workers. Integer partials are exact, so the scalar and vector
//! paths agree bit for bit; both fold a finished group through [`combine`].

use std::ops::Range;

use super::cursor::IndexCursor;
use super::fast_agg::{plane_chain_bias, rhadd, HalvingAdder};
use super::BlockCtx;
use crate::scalar::Scalar;

/// Lookups accumulated in 16 bits before spilling to 32; `127 * 256 < i16::MAX`.
pub(crate) const MAX_RUN: usize = 256;

/// Adds one quantization group to an output: `out + scale * (acc * hts - hrs)`
/// with both steps fused, as the native paths compute it.
/// `acc = sum_i 2^i * sum(q_i)`, so `acc * table_scale / 2` is the plane-weighted sum.
#[inline]
pub(crate) fn combine<T: Scalar>(out: T, acc: i32, scale: T, half_table_scale: T, half_rowsum: T) -> T {
    scale.mul_add(T::of_i32(acc).mul_add(half_table_scale, -half_rowsum), out)
}

/// Signed lookup in a mirror-consolidated table of `2^(g-1)` entries.
#[inline]
fn mirrored(table: &[i8], g: usize, idx: u8) -> i8 {
    let top = 1u8 << (g - 1);
    let full = ((1u16 << g) - 1) as u8;
    if idx & top != 0 {
        -table[(full ^ idx) as usize]
    } else {
        table[idx as usize]
    }
}

fn cursors<'a, T: Scalar>(ctx: &BlockCtx<'a, T>, mb: usize) -> Vec<IndexCursor<'a>> {
    let pw = ctx.pw;
    let stripe = pw.stripe_bytes();
    pw.planes()
        .iter()
        .map(|p| IndexCursor::new(&p[mb * stripe..(mb + 1) * stripe], pw.tile().g, pw.tile().lanes))
        .collect()
}

/// Folds staged group accumulators for lane block `lb` into `out` and clears them.
#[allow(clippy::too_many_arguments)]
#[inline]
fn finish_group<T: Scalar>(
    ctx: &BlockCtx<'_, T>,
    acc: &mut [i32],
    out: &mut [T],
    mb: usize,
    local: usize,
    lb: usize,
    gq: usize,
    width: usize,
) {
    let tile = ctx.pw.tile();
    let (m_tile, lanes) = (tile.m_tile, tile.lanes);
    let groups = ctx.groups();
    let sw = &ctx.pw.block_scales(mb, gq)[lb * lanes..][..lanes];
    for n in 0..ctx.n_rows {
        let hts = ctx.half_table_scales[n * groups + gq];
        let hrs = ctx.half_rowsums[n * groups + gq];
        let a = &mut acc[n * m_tile + lb * lanes..][..lanes];
        let dst = &mut out[n * width + local * m_tile + lb * lanes..][..lanes];
        for ((d, x), &s) in dst.iter_mut().zip(a.iter_mut()).zip(sw) {
            *d = combine(*d, *x, s, hts, hrs);
            *x = 0;
        }
    }
}

pub(crate) fn run_scalar<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    let pw = ctx.pw;
    let tile = pw.tile();
    let (m_tile, lanes, kgt) = (tile.m_tile, tile.lanes, tile.k_groups());
    let n_rows = ctx.n_rows;
    let width = mbs.len() * m_tile;
    let group_kg = ctx.plan.group_kg;
    let mut out = vec![T::zero(); n_rows * width];
    let mut acc = vec![0i32; n_rows * m_tile];
    let mut lookups = 0;

    for (local, mb) in mbs.enumerate() {
        let mut cursors = cursors(ctx, mb);
        for kt in 0..pw.k() / tile.k_tile {
            for lb in 0..m_tile / lanes {
                for kgl in 0..kgt {
                    let kg = kt * kgt + kgl;
                    for (i, cur) in cursors.iter_mut().enumerate() {
                        let idx = cur.next_item();
                        for n in 0..n_rows {
                            let a = &mut acc[n * m_tile + lb * lanes..][..lanes];
                            for (x, &ix) in a.iter_mut().zip(idx) {
                                *x += (ctx.lut.qvalue(n, kg, ix as usize) as i32) << i;
                            }
                        }
                    }
                    if (kg + 1) % group_kg == 0 {
                        finish_group(ctx, &mut acc, &mut out, mb, local, lb, kg / group_kg, width);
                    }
                }
            }
            lookups += ctx.tile_lookups();
        }
    }
    (out, lookups)
}

pub(crate) fn run_vector<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    #[cfg(target_arch = "x86_64")]
    {
        if super::x86::supported(ctx) {
            // SAFETY: `supported` checked the CPU features and operand shape.
            return unsafe { super::x86::run_q8(ctx, mbs) };
        }
    }
    run_vector_portable(ctx, mbs)
}

/// Lane-parallel form: a whole lane block is looked up per plane into bytes,
/// summed in 16 bits, and spilled to 32 bits at run or group ends.
pub(crate) fn run_vector_portable<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    let pw = ctx.pw;
    let tile = pw.tile();
    let (m_tile, lanes, kgt, g) = (tile.m_tile, tile.lanes, tile.k_groups(), tile.g);
    let bits = pw.bits() as usize;
    let n_rows = ctx.n_rows;
    let width = mbs.len() * m_tile;
    let group_kg = ctx.plan.group_kg;
    let mut out = vec![T::zero(); n_rows * width];
    let mut acc = vec![0i32; n_rows * m_tile];
    let mut acc16 = vec![0i16; n_rows * bits * lanes];
    let mut vals = vec![0i8; lanes];
    let mut lookups = 0;

    for (local, mb) in mbs.enumerate() {
        let mut cursors = cursors(ctx, mb);
        for kt in 0..pw.k() / tile.k_tile {
            for lb in 0..m_tile / lanes {
                let mut run = 0;
                for kgl in 0..kgt {
                    let kg = kt * kgt + kgl;
                    for (i, cur) in cursors.iter_mut().enumerate() {
                        let idx = cur.next_item();
                        for n in 0..n_rows {
                            let table = ctx.lut.qtable(n, kg);
                            for (v, &ix) in vals.iter_mut().zip(idx) {
                                *v = mirrored(table, g, ix);
                            }
                            let a = &mut acc16[(n * bits + i) * lanes..][..lanes];
                            for (x, &v) in a.iter_mut().zip(&vals) {
                                *x += v as i16;
                            }
                        }
                    }
                    run += 1;
                    let group_end = (kg + 1) % group_kg == 0;
                    if group_end || kgl + 1 == kgt || run == MAX_RUN {
                        for n in 0..n_rows {
                            let a = &mut acc[n * m_tile + lb * lanes..][..lanes];
                            for i in 0..bits {
                                let p = &mut acc16[(n * bits + i) * lanes..][..lanes];
                                for (x, y) in a.iter_mut().zip(p.iter_mut()) {
                                    *x += (*y as i32) << i;
                                    *y = 0;
                                }
                            }
                        }
                        run = 0;
                    }
                    if group_end {
                        finish_group(ctx, &mut acc, &mut out, mb, local, lb, kg / group_kg, width);
                    }
                }
            }
            lookups += ctx.tile_lookups();
        }
    }
    (out, lookups)
}

/// Each plane's lookups over a quantization group are reduced by a halving
/// tree, the plane results folded low bit first by halving adds, then
/// rescaled and debiased.
pub(crate) fn run_fast_aggregation<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    let pw = ctx.pw;
    let tile = pw.tile();
    let (m_tile, lanes, kgt, g) = (tile.m_tile, tile.lanes, tile.k_groups(), tile.g);
    let bits = pw.bits() as usize;
    let n_rows = ctx.n_rows;
    let width = mbs.len() * m_tile;
    let groups = ctx.groups();
    let group_kg = ctx.plan.group_kg;
    let depth = ctx.plan.depth;
    let rescale = T::of(((bits as u32 + depth) as f64).exp2());
    let bias = T::of(plane_chain_bias(depth, bits as u32));
    let mut out = vec![T::zero(); n_rows * width];
    // One adder per (row, output, plane).
    let mut adders = vec![HalvingAdder::new(depth); n_rows * m_tile * bits];
    let mut lookups = 0;

    for (local, mb) in mbs.enumerate() {
        let mut cursors = cursors(ctx, mb);
        for kt in 0..pw.k() / tile.k_tile {
            for lb in 0..m_tile / lanes {
                for kgl in 0..kgt {
                    let kg = kt * kgt + kgl;
                    for (i, cur) in cursors.iter_mut().enumerate() {
                        let idx = cur.next_item();
                        for n in 0..n_rows {
                            let table = ctx.lut.qtable(n, kg);
                            for (l, &ix) in idx.iter().enumerate() {
                                let m = lb * lanes + l;
                                adders[(n * m_tile + m) * bits + i].push(mirrored(table, g, ix));
                            }
                        }
                    }
                    if (kg + 1) % group_kg == 0 {
                        let gq = kg / group_kg;
                        let sw = &pw.block_scales(mb, gq)[lb * lanes..][..lanes];
                        for n in 0..n_rows {
                            let hts = ctx.half_table_scales[n * groups + gq];
                            let hrs = ctx.half_rowsums[n * groups + gq];
                            for (l, &s) in sw.iter().enumerate() {
                                let m = lb * lanes + l;
                                let mut c = 0i8;
                                for a in &mut adders[(n * m_tile + m) * bits..][..bits] {
                                    c = rhadd(a.take(), c);
                                }
                                let approx = T::of_i32(c as i32) * rescale - bias;
                                let d = &mut out[n * width + local * m_tile + m];
                                *d = *d + s * (approx * hts - hrs);
                            }
                        }
                    }
                }
            }
            lookups += ctx.tile_lookups();
        }
    }
    (out, lookups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirrored_matches_full_table() {
        for g in 1..=8usize {
            let half: Vec<i8> = (0..1 << (g - 1)).map(|i| (i as i32 * 3 - 50).clamp(-127, 127) as i8).collect();
            for idx in 0..(1u16 << g) {
                let idx = idx as u8;
                let full = ((1u16 << g) - 1) as u8;
                let want = if (idx as usize) < half.len() { half[idx as usize] } else { -half[(full ^ idx) as usize] };
                assert_eq!(mirrored(&half, g, idx), want);
            }
        }
    }

    #[test]
    fn mirrored_agrees_with_byte_primitive() {
        let table: Vec<i8> = vec![0, 5, -9, 14, 127, -127, 3, -1];
        let idx: Vec<u8> = (0..16).collect();
        let mut out = [0i8; 16];
        super::super::lookup::lookup_mirrored(&table, &idx, &mut out);
        for (i, &o) in out.iter().enumerate() {
            assert_eq!(o, mirrored(&table, 4, i as u8));
        }
    }
}
