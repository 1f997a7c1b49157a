//! Real-valued tables, one output at a time.

use std::ops::Range;

use super::cursor::IndexCursor;
use super::BlockCtx;
use crate::scalar::Scalar;

pub(crate) fn run<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    let pw = ctx.pw;
    let tile = pw.tile();
    let (m_tile, lanes, kgt) = (tile.m_tile, tile.lanes, tile.k_groups());
    let bits = pw.bits() as usize;
    let n_rows = ctx.n_rows;
    let groups = ctx.groups();
    let group_kg = ctx.plan.group_kg;
    let width = mbs.len() * m_tile;
    let stripe = pw.stripe_bytes();

    let coef: Vec<T> = (0..bits).map(|i| T::of((i as f64 - 1.0).exp2())).collect();
    let mut out = vec![T::zero(); n_rows * width];
    // P_i per (plane, row, output within the block).
    let mut staging = vec![T::zero(); bits * n_rows * m_tile];
    let mut lookups = 0;

    for (local, mb) in mbs.enumerate() {
        let mut cursors: Vec<IndexCursor> = pw
            .planes()
            .iter()
            .map(|p| IndexCursor::new(&p[mb * stripe..(mb + 1) * stripe], tile.g, lanes))
            .collect();
        for kt in 0..pw.k() / tile.k_tile {
            for lb in 0..m_tile / lanes {
                for kgl in 0..kgt {
                    let kg = kt * kgt + kgl;
                    for (i, cur) in cursors.iter_mut().enumerate() {
                        let idx = cur.next_item();
                        for n in 0..n_rows {
                            let st = &mut staging[(i * n_rows + n) * m_tile + lb * lanes..][..lanes];
                            for (s, &ix) in st.iter_mut().zip(idx) {
                                *s = *s + ctx.lut.value(n, kg, ix as usize);
                            }
                        }
                    }
                    if (kg + 1) % group_kg == 0 {
                        let gq = kg / group_kg;
                        let sw = &pw.block_scales(mb, gq)[lb * lanes..][..lanes];
                        for n in 0..n_rows {
                            let hrs = ctx.half_rowsums[n * groups + gq];
                            let dst = &mut out[n * width + local * m_tile + lb * lanes..][..lanes];
                            for (l, d) in dst.iter_mut().enumerate() {
                                let mut comb = T::zero();
                                for (i, &c) in coef.iter().enumerate() {
                                    let s = &mut staging[(i * n_rows + n) * m_tile + lb * lanes + l];
                                    comb = comb + c * *s;
                                    *s = T::zero();
                                }
                                *d = *d + sw[l] * (comb - hrs);
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
