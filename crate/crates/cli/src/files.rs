//! Raw real-matrix (`LMRM`) and quantized-weight (`LMQW`) files. Integers and
//! reals are little-endian; layouts are in `docs/formats.md`.

use std::fs;
use std::path::Path;

use bitlut::{Error, FormatError, Matrix, QuantizedWeights, Result};

pub const REAL_MAGIC: [u8; 4] = *b"LMRM";
pub const QUANT_MAGIC: [u8; 4] = *b"LMQW";
pub const FILE_VERSION: u32 = 1;

pub fn encode_real(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.rows() * m.cols() * 4);
    out.extend_from_slice(&REAL_MAGIC);
    for v in [FILE_VERSION, m.rows() as u32, m.cols() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..m.rows() {
        for v in m.row(r) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_real(bytes: &[u8]) -> Result<Matrix<f32>> {
    let mut r = Reader::new(bytes, REAL_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = checked_len(rows, cols, 4, "rows")?;
    r.expect_remaining(n)?;
    let data = r.f32s(rows * cols)?;
    Matrix::new(rows, cols, data)
}

pub fn encode_quantized(qw: &QuantizedWeights<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + qw.scales().len() * 4 + qw.qvalues().len());
    out.extend_from_slice(&QUANT_MAGIC);
    for v in [FILE_VERSION, qw.m() as u32, qw.k() as u32, qw.bits(), qw.group_size() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in qw.scales() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(qw.qvalues());
    out
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedWeights<f32>> {
    let mut r = Reader::new(bytes, QUANT_MAGIC)?;
    let m = r.u32()? as usize;
    let k = r.u32()? as usize;
    let bits = r.u32()?;
    let group_size = r.u32()? as usize;
    if group_size == 0 || k % group_size != 0 {
        return Err(header("group_size", format!("{group_size} does not divide k={k}")));
    }
    let n_scales = m * (k / group_size);
    let n = checked_len(n_scales, 4, 1, "m")? + checked_len(m, k, 1, "k")?;
    r.expect_remaining(n)?;
    let scales = r.f32s(n_scales)?;
    let codes = r.take(m * k)?.to_vec();
    QuantizedWeights::new(m, k, bits, group_size, codes, scales)
}

pub fn read_real(path: &Path) -> Result<Matrix<f32>> {
    decode_real(&fs::read(path)?)
}

pub fn write_real(path: &Path, m: &Matrix<f32>) -> Result<()> {
    Ok(fs::write(path, encode_real(m))?)
}

pub fn read_quantized(path: &Path) -> Result<QuantizedWeights<f32>> {
    decode_quantized(&fs::read(path)?)
}

pub fn write_quantized(path: &Path, qw: &QuantizedWeights<f32>) -> Result<()> {
    Ok(fs::write(path, encode_quantized(qw))?)
}

fn header(field: &'static str, detail: impl Into<String>) -> Error {
    FormatError::Header {
        field,
        detail: detail.into(),
    }
    .into()
}

fn checked_len(a: usize, b: usize, c: usize, field: &'static str) -> Result<usize> {
    a.checked_mul(b)
        .and_then(|x| x.checked_mul(c))
        .ok_or_else(|| header(field, "size overflows"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic { expected: magic, found }.into());
        }
        let version = r.u32()?;
        if version != FILE_VERSION {
            return Err(FormatError::Version {
                expected: FILE_VERSION,
                found: version,
            }
            .into());
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            }
            .into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Short bodies are truncated; long ones disagree with the header.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            }
            .into());
        }
        if left > n {
            return Err(FormatError::LengthMismatch {
                expected: self.pos + n,
                found: self.buf.len(),
            }
            .into());
        }
        Ok(())
    }
}
