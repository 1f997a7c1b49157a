//! AVX2 path for 4-bit indices and 16 lanes.
//!
//! The stored tables keep only 8 entries; each worker expands them once to all
//! 16 (upper half = lower half negated and reversed), so one byte shuffle
//! looks up a lane block. Lookups are summed per plane in 16 bits, planes are
//! merged with shifts before widening, and for `f32` a lane block's outputs
//! stay in registers across the tile.

use std::any::TypeId;
use std::arch::x86_64::*;
use std::ops::Range;

use super::quantized::{combine, MAX_RUN};
use super::BlockCtx;
use crate::scalar::Scalar;

const LANES: usize = 16;

pub(crate) fn supported<T: Scalar>(ctx: &BlockCtx<'_, T>) -> bool {
    let tile = ctx.pw.tile();
    tile.g == 4
        && tile.lanes == LANES
        && ctx.lut.is_consolidated()
        && is_x86_feature_detected!("avx2")
        && is_x86_feature_detected!("fma")
}

/// Longest run whose plane-merged 16-bit sum cannot overflow.
const fn max_run(bits: usize) -> usize {
    let r = i16::MAX as usize / (127 * ((1 << bits) - 1));
    if r < MAX_RUN {
        r
    } else {
        MAX_RUN
    }
}

/// # Safety
/// The CPU must support AVX2 and FMA and `supported(ctx)` must hold.
pub(crate) unsafe fn run_q8<T: Scalar>(ctx: &BlockCtx<'_, T>, mbs: Range<usize>) -> (Vec<T>, u64) {
    let kgt = ctx.pw.tile().k_groups();
    let gkg = ctx.plan.group_kg;
    let bits = ctx.pw.bits() as usize;
    // Groups that tile each K-tile exactly get a loop unrolled to the group length.
    let regular = matches!(gkg, 2 | 4 | 8 | 16) && kgt % gkg == 0 && gkg <= max_run(bits);
    macro_rules! by_group {
        ($b:literal) => {
            match (regular, gkg) {
                (true, 2) => run_bits::<T, $b, 2>(ctx, mbs),
                (true, 4) => run_bits::<T, $b, 4>(ctx, mbs),
                (true, 8) => run_bits::<T, $b, 8>(ctx, mbs),
                (true, 16) => run_bits::<T, $b, 16>(ctx, mbs),
                _ => run_bits::<T, $b, 0>(ctx, mbs),
            }
        };
    }
    match bits {
        1 => by_group!(1),
        2 => by_group!(2),
        3 => by_group!(3),
        _ => by_group!(4),
    }
}

/// Read position in the interleaved streams of all planes. Each 16-byte load
/// carries two consecutive items: low nibbles, then high nibbles.
#[derive(Clone, Copy)]
struct Stream<const BITS: usize> {
    ptr: [*const u8; BITS],
    pending: [__m128i; BITS],
    odd: bool,
}

macro_rules! accumulate {
    ($acc:expr, $tbl:expr, $idx:expr) => {
        $acc = _mm256_add_epi16($acc, _mm256_cvtepi8_epi16(_mm_shuffle_epi8($tbl, $idx)))
    };
}

/// Sums `len` consecutive items of every plane into 16-bit accumulators, using
/// the expanded tables starting at `tbl`.
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn segment<const BITS: usize>(s: &mut Stream<BITS>, tbl: *const __m128i, len: usize) -> [__m256i; BITS] {
    let low4 = _mm_set1_epi8(0x0f);
    let mut acc = [_mm256_setzero_si256(); BITS];
    let mut j = 0;
    if s.odd && len > 0 {
        let t = *tbl;
        for i in 0..BITS {
            accumulate!(acc[i], t, s.pending[i]);
        }
        s.odd = false;
        j = 1;
    }
    while j + 2 <= len {
        let (t0, t1) = (*tbl.add(j), *tbl.add(j + 1));
        for i in 0..BITS {
            let v = _mm_loadu_si128(s.ptr[i] as *const __m128i);
            s.ptr[i] = s.ptr[i].add(LANES);
            accumulate!(acc[i], t0, _mm_and_si128(v, low4));
            accumulate!(acc[i], t1, _mm_and_si128(_mm_srli_epi16::<4>(v), low4));
        }
        j += 2;
    }
    if j < len {
        let t = *tbl.add(j);
        for i in 0..BITS {
            let v = _mm_loadu_si128(s.ptr[i] as *const __m128i);
            s.ptr[i] = s.ptr[i].add(LANES);
            accumulate!(acc[i], t, _mm_and_si128(v, low4));
            s.pending[i] = _mm_and_si128(_mm_srli_epi16::<4>(v), low4);
        }
        s.odd = true;
    }
    acc
}

/// `sum_i acc_i << i` in 16 bits, widened and added to the two i32 halves.
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn merge<const BITS: usize>(acc16: &[__m256i; BITS], acc32: &mut [__m256i; 2]) {
    let mut m = acc16[0];
    for (i, a) in acc16.iter().enumerate().skip(1) {
        m = _mm256_add_epi16(m, _mm256_sll_epi16(*a, _mm_cvtsi32_si128(i as i32)));
    }
    acc32[0] = _mm256_add_epi32(acc32[0], _mm256_cvtepi16_epi32(_mm256_castsi256_si128(m)));
    acc32[1] = _mm256_add_epi32(acc32[1], _mm256_cvtepi16_epi32(_mm256_extracti128_si256::<1>(m)));
}

/// Folds a finished group into the outputs and clears `acc32`. The `f32` form
/// uses the same fused operations as [`combine`], so results are identical.
#[allow(clippy::too_many_arguments)]
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn finish<T: Scalar>(
    is_f32: bool,
    acc32: &mut [__m256i; 2],
    o: &mut [__m256; 2],
    outp: *mut T,
    sw: *const T,
    hts: T,
    hrs: T,
) {
    if is_f32 {
        let swf = sw as *const f32;
        let (h, r) = (_mm256_set1_ps(hts.as_f32()), _mm256_set1_ps(hrs.as_f32()));
        for j in 0..2 {
            let x = _mm256_fmsub_ps(_mm256_cvtepi32_ps(acc32[j]), h, r);
            o[j] = _mm256_fmadd_ps(_mm256_loadu_ps(swf.add(8 * j)), x, o[j]);
        }
    } else {
        let mut x = [0i32; LANES];
        _mm256_storeu_si256(x.as_mut_ptr() as *mut __m256i, acc32[0]);
        _mm256_storeu_si256(x.as_mut_ptr().add(8) as *mut __m256i, acc32[1]);
        for (l, &xl) in x.iter().enumerate() {
            *outp.add(l) = combine(*outp.add(l), xl, *sw.add(l), hts, hrs);
        }
    }
    *acc32 = [_mm256_setzero_si256(); 2];
}

/// Expands 8 stored entries to the full 16-entry table.
#[inline]
#[target_feature(enable = "avx2,fma")]
unsafe fn expand(stored: *const i8) -> __m128i {
    let reverse8 = _mm_setr_epi8(7, 6, 5, 4, 3, 2, 1, 0, -1, -1, -1, -1, -1, -1, -1, -1);
    let half = _mm_loadl_epi64(stored as *const __m128i);
    let mirrored = _mm_shuffle_epi8(_mm_sub_epi8(_mm_setzero_si128(), half), reverse8);
    _mm_unpacklo_epi64(half, mirrored)
}

/// `GKG > 0`: groups of `GKG` k-groups tile every K-tile exactly, so no group
/// state crosses a tile. `GKG == 0`: general runs.
#[target_feature(enable = "avx2,fma")]
unsafe fn run_bits<T: Scalar, const BITS: usize, const GKG: usize>(
    ctx: &BlockCtx<'_, T>,
    mbs: Range<usize>,
) -> (Vec<T>, u64) {
    let pw = ctx.pw;
    let tile = pw.tile();
    let (m_tile, kgt) = (tile.m_tile, tile.k_groups());
    let n_rows = ctx.n_rows;
    let width = mbs.len() * m_tile;
    let groups = ctx.groups();
    let group_kg = ctx.plan.group_kg;
    let stripe = pw.stripe_bytes();
    let lut_kgs = ctx.lut.k_groups();
    let tables = ctx.lut.qentries().as_ptr();
    let scales = pw.block_scales.as_ptr();
    let is_f32 = TypeId::of::<T>() == TypeId::of::<f32>();
    let run_cap = max_run(BITS);

    let mut out = vec![T::zero(); n_rows * width];
    // Group partials that outlive a K-tile, per (row, output); general case only.
    let mut acc = vec![0i32; if GKG == 0 { n_rows * m_tile } else { 0 }];
    let mut full = vec![_mm_setzero_si128(); n_rows * lut_kgs];
    for (i, t) in full.iter_mut().enumerate() {
        *t = expand(tables.add(i * 8));
    }
    let mut lookups = 0;

    for (local, mb) in mbs.enumerate() {
        let mut stream = Stream::<BITS> {
            ptr: [std::ptr::null(); BITS],
            pending: [_mm_setzero_si128(); BITS],
            odd: false,
        };
        for (p, plane) in stream.ptr.iter_mut().zip(pw.planes()) {
            *p = plane[mb * stripe..].as_ptr();
        }
        let block_scales = scales.add(mb * groups * m_tile);
        for kt in 0..pw.k() / tile.k_tile {
            let kg0 = kt * kgt;
            let first_gq = kg0 / group_kg;
            let first_to_group = group_kg - kg0 % group_kg;
            for lb in 0..m_tile / LANES {
                let mut next = stream;
                for n in 0..n_rows {
                    let mut s = stream;
                    let accp = acc.as_mut_ptr().wrapping_add(n * m_tile + lb * LANES) as *mut __m256i;
                    let mut a32 = [_mm256_setzero_si256(); 2];
                    if GKG == 0 {
                        a32 = [_mm256_loadu_si256(accp), _mm256_loadu_si256(accp.add(1))];
                    }
                    let outp = out.as_mut_ptr().add(n * width + local * m_tile + lb * LANES);
                    let of = outp as *mut f32;
                    let mut o = [_mm256_setzero_ps(); 2];
                    if is_f32 {
                        o = [_mm256_loadu_ps(of), _mm256_loadu_ps(of.add(8))];
                    }
                    let tbl = full.as_ptr().add(n * lut_kgs + kg0);
                    let hts = &ctx.half_table_scales[n * groups..(n + 1) * groups];
                    let hrs = &ctx.half_rowsums[n * groups..(n + 1) * groups];
                    let mut gq = first_gq;
                    if GKG > 0 {
                        for gi in 0..kgt / GKG {
                            let a16 = segment::<BITS>(&mut s, tbl.add(gi * GKG), GKG);
                            merge::<BITS>(&a16, &mut a32);
                            let sw = block_scales.add(gq * m_tile + lb * LANES);
                            finish(is_f32, &mut a32, &mut o, outp, sw, hts[gq], hrs[gq]);
                            gq += 1;
                        }
                    } else {
                        let mut kgl = 0;
                        let mut to_group = first_to_group;
                        while kgl < kgt {
                            let len = to_group.min(kgt - kgl).min(run_cap);
                            let a16 = segment::<BITS>(&mut s, tbl.add(kgl), len);
                            merge::<BITS>(&a16, &mut a32);
                            kgl += len;
                            to_group -= len;
                            if to_group == 0 {
                                let sw = block_scales.add(gq * m_tile + lb * LANES);
                                finish(is_f32, &mut a32, &mut o, outp, sw, hts[gq], hrs[gq]);
                                to_group = group_kg;
                                gq += 1;
                            }
                        }
                        _mm256_storeu_si256(accp, a32[0]);
                        _mm256_storeu_si256(accp.add(1), a32[1]);
                    }
                    if is_f32 {
                        _mm256_storeu_ps(of, o[0]);
                        _mm256_storeu_ps(of.add(8), o[1]);
                    }
                    next = s;
                }
                stream = next;
            }
            lookups += ctx.tile_lookups();
        }
    }
    (out, lookups)
}
