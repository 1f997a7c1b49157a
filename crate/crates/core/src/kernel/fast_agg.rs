//! Approximate 8-bit aggregation with rounding halving adds.
//!
//! Averaging pairs (`(a + b + 1) >> 1`) never leaves the signed byte range, so
//! lookups can be summed without widening. Each halving rounds up on odd sums,
//! which over uniform parities adds `+1/4` per operation at its level; the
//! expected total is removed afterwards.

/// `floor((a + b + 1) / 2)` on signed bytes.
#[inline]
pub fn rhadd(a: i8, b: i8) -> i8 {
    ((a as i16 + b as i16 + 1) >> 1) as i8
}

/// Pairwise tree over `2^depth` values: `((v0, v1), (v2, v3)), ...`.
pub fn halving_tree(partials: &[i8], depth: u32) -> i8 {
    assert_eq!(partials.len(), 1 << depth, "need 2^depth partials");
    let mut level = partials.to_vec();
    while level.len() > 1 {
        level = level.chunks_exact(2).map(|p| rhadd(p[0], p[1])).collect();
    }
    level[0]
}

/// Expected upward bias of `halving_tree(..) * 2^depth` relative to the exact sum.
pub fn bias_correction(depth: u32) -> f64 {
    depth as f64 * (1u64 << depth) as f64 / 4.0
}

/// Approximate sum of `2^depth` values: rescaled tree result minus the bias.
pub fn fast_aggregate(partials: &[i8], depth: u32) -> f64 {
    halving_tree(partials, depth) as f64 * (1u64 << depth) as f64 - bias_correction(depth)
}

/// Combined bias when each of `bits` planes is reduced with a depth-`depth`
/// tree and the plane results are folded low bit first with
/// `c = rhadd(t_i, c)` from `c = 0`, the whole rescaled by `2^(bits + depth)`.
pub fn plane_chain_bias(depth: u32, bits: u32) -> f64 {
    let planes = ((1u64 << bits) - 1) as f64;
    planes * bias_correction(depth) + planes * (1u64 << depth) as f64 / 2.0
}

/// Streaming form of [`halving_tree`]: push values in order, read the root once
/// `2^depth` have been pushed.
#[derive(Debug, Clone)]
pub struct HalvingAdder {
    slots: Vec<Option<i8>>,
}

impl HalvingAdder {
    pub fn new(depth: u32) -> Self {
        HalvingAdder {
            slots: vec![None; depth as usize + 1],
        }
    }

    #[inline]
    pub fn push(&mut self, v: i8) {
        let mut x = v;
        let mut lvl = 0;
        while let Some(prev) = self.slots[lvl].take() {
            x = rhadd(prev, x);
            lvl += 1;
        }
        self.slots[lvl] = Some(x);
    }

    /// Root of a complete tree; resets the adder.
    pub fn take(&mut self) -> i8 {
        let root = self.slots.last_mut().unwrap().take().expect("tree incomplete");
        debug_assert!(self.slots.iter().all(Option::is_none));
        root
    }
}
