//! Offline weight preparation: bit planes, tile permutation, interleaving, and
//! the `LMPW` stream format. Nothing here runs on the inference path.

mod format;
mod layout;
mod packed;
mod planes;

pub use format::{deserialize, serialize, FORMAT_VERSION, HEADER_BYTES, MAGIC};
pub use layout::{
    check_layout, deinterleave, index_width, indices_per_byte, interleave, permute, unpermute,
    LAYOUT_VERSION,
};
pub use packed::{pack_and_permute, pad_quantum, prepack, unpack_planes, PackedWeights};
pub use planes::{decompose_bits, BitPlane};
