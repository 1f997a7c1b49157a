//! Byte-parallel table lookup: given a 16-entry byte table and a run of index
//! bytes, return the looked-up bytes. Native shuffle instructions implement the
//! same contract; these are the portable versions.

/// `out[j] = table[idx[j] & 15]`.
#[inline]
pub fn lookup_bytes(table: &[u8; 16], idx: &[u8], out: &mut [u8]) {
    for (o, &i) in out.iter_mut().zip(idx) {
        *o = table[(i & 0x0f) as usize];
    }
}

/// Lookup into a mirror-consolidated signed table of 8 stored entries: indices
/// with the top bit set read `-table[15 ^ idx]`.
#[inline]
pub fn lookup_mirrored(table: &[i8], idx: &[u8], out: &mut [i8]) {
    debug_assert!(table.len() >= 8);
    for (o, &i) in out.iter_mut().zip(idx) {
        debug_assert!(i < 16);
        let folded = i.min(i ^ 0x0f);
        let v = table[folded as usize];
        *o = if i & 0x08 != 0 { -v } else { v };
    }
}

/// Wide-table mode: 16-bit entries looked up as two byte tables (low and high
/// halves) and recombined.
pub fn lookup_wide(table: &[i16; 16], idx: &[u8], out: &mut [i16]) {
    let mut lo_t = [0u8; 16];
    let mut hi_t = [0u8; 16];
    for (j, &v) in table.iter().enumerate() {
        let [lo, hi] = v.to_le_bytes();
        lo_t[j] = lo;
        hi_t[j] = hi;
    }
    let mut lo = vec![0u8; idx.len()];
    let mut hi = vec![0u8; idx.len()];
    lookup_bytes(&lo_t, idx, &mut lo);
    lookup_bytes(&hi_t, idx, &mut hi);
    for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
        *o = i16::from_le_bytes([l, h]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mirrored_matches_full_table() {
        let half: [i8; 8] = [-10, -7, -3, 0, 1, 5, 9, 127];
        let full: Vec<i8> = (0..16).map(|i| if i < 8 { half[i] } else { -half[15 - i] }).collect();
        let idx: Vec<u8> = (0..16).collect();
        let mut out = [0i8; 16];
        lookup_mirrored(&half, &idx, &mut out);
        assert_eq!(out.to_vec(), full);
    }

    proptest! {
        #[test]
        fn wide_equals_direct(table in prop::array::uniform16(any::<i16>()), idx in prop::collection::vec(0u8..16, 0..64)) {
            let mut out = vec![0i16; idx.len()];
            lookup_wide(&table, &idx, &mut out);
            let want: Vec<i16> = idx.iter().map(|&i| table[i as usize]).collect();
            prop_assert_eq!(out, want);
        }
    }
}
