//! Lookup-table mixed-precision matrix multiplication.
//!
//! Low-bit weights are split into one-bit planes whose `g`-bit groups index
//! tables of precomputed signed activation sums, so the inner loop is lookups
//! and adds instead of multiplies. See the README for the end-to-end pipeline.

pub mod bitserial;
pub mod error;
pub mod kernel;
pub mod lut;
pub mod matrix;
pub mod oracle;
pub mod quant;
pub mod scalar;
pub mod tile;
pub mod tuner;
pub mod weight_prep;

pub use bitserial::{bit_serial_params, BitSerialParams};
pub use error::{Error, FormatError, Result};
pub use matrix::Matrix;
pub use quant::{dequantize, quantize_rtn, QuantizedWeights};
pub use scalar::Scalar;
pub use tile::TileConfig;
pub use kernel::{mpgemm, mpgemm_with_stats, mpgemv, KernelOptions, KernelStats, KernelVariant};
pub use lut::LookupTables;
pub use weight_prep::{prepack, PackedWeights};

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type QuantizedWeights32 = QuantizedWeights<f32>;
pub type QuantizedWeights64 = QuantizedWeights<f64>;
pub type PackedWeights32 = PackedWeights<f32>;
pub type PackedWeights64 = PackedWeights<f64>;
pub type LookupTables32 = LookupTables<f32>;
pub type LookupTables64 = LookupTables<f64>;
