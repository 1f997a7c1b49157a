//! Library side of the `bitlut` command: file formats, benchmarking, and
//! error analysis shared by the binary and its tests.

pub mod analysis;
pub mod bench;
pub mod files;
