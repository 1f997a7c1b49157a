//! Sequential decoder for an interleaved index stream.

use crate::weight_prep::{index_width, indices_per_byte};

/// Yields `lanes` indices at a time in stream order.
pub(crate) struct IndexCursor<'a> {
    bytes: &'a [u8],
    lanes: usize,
    per_byte: usize,
    width: usize,
    mask: u8,
    buf: Vec<u8>,
    slot: usize,
}

impl<'a> IndexCursor<'a> {
    /// `bytes` must start on an interleave block boundary.
    pub fn new(bytes: &'a [u8], g: usize, lanes: usize) -> Self {
        let per_byte = indices_per_byte(g);
        let width = index_width(g);
        IndexCursor {
            bytes,
            lanes,
            per_byte,
            width,
            mask: if width == 8 { 0xff } else { (1u8 << width) - 1 },
            buf: vec![0; per_byte * lanes],
            slot: per_byte,
        }
    }

    #[inline]
    pub fn next_item(&mut self) -> &[u8] {
        if self.slot == self.per_byte {
            let (block, rest) = self.bytes.split_at(self.lanes);
            self.bytes = rest;
            for s in 0..self.per_byte {
                let shift = s * self.width;
                for (d, &b) in self.buf[s * self.lanes..(s + 1) * self.lanes].iter_mut().zip(block) {
                    *d = (b >> shift) & self.mask;
                }
            }
            self.slot = 0;
        }
        let s = self.slot;
        self.slot += 1;
        &self.buf[s * self.lanes..(s + 1) * self.lanes]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_prep::interleave;

    #[test]
    fn cursor_replays_interleaved_indices() {
        for g in 1..=8 {
            let lanes = 4;
            let n = indices_per_byte(g) * lanes * 3;
            let idx: Vec<u8> = (0..n).map(|i| (i * 7 % (1 << g)) as u8).collect();
            let bytes = interleave(&idx, g, lanes).unwrap();
            let mut cur = IndexCursor::new(&bytes, g, lanes);
            let mut got = Vec::new();
            for _ in 0..n / lanes {
                got.extend_from_slice(cur.next_item());
            }
            assert_eq!(got, idx, "g={g}");
        }
    }
}
