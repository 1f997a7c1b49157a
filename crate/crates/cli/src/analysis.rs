//! NMSE of each kernel variant against the unquantized product on Gaussian data.

use bitlut::oracle::reference_mpgemm;
use bitlut::{mpgemm, prepack, quantize_rtn, KernelOptions, KernelVariant, Matrix, QuantizedWeights, Result, TileConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Standard normal samples in row-major order. The stream is ChaCha8 seeded
/// with `seed_from_u64` and mapped through the ziggurat sampler of `rand_distr`,
/// so a seed fixes the values on every platform.
pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Matrix<f32>> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `sum (y - y_hat)^2 / sum y^2`.
pub fn nmse(reference: &[f64], approx: &[f64]) -> f64 {
    let (num, den) = reference.iter().zip(approx).fold((0.0, 0.0), |(n, d), (&y, &h)| {
        let e = y - h;
        (n + e * e, d + y * y)
    });
    num / den
}

#[derive(Debug, Clone)]
pub struct NmseRequest {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub bits: u32,
    pub group_size: usize,
    pub tile: TileConfig,
    pub variants: Vec<KernelVariant>,
    pub threads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantNmse {
    pub variant: String,
    pub nmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmseReport {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub bits: u32,
    pub group_size: usize,
    pub g: usize,
    pub seed: u64,
    /// Dequantized weights multiplied exactly: the error of weight quantization alone.
    pub quantization_only: f64,
    pub variants: Vec<VariantNmse>,
}

impl NmseReport {
    pub fn get(&self, v: KernelVariant) -> Option<f64> {
        self.variants.iter().find(|r| r.variant == v.name()).map(|r| r.nmse)
    }
}

fn product(a: &Matrix<f64>, w: &Matrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * w.rows());
    for n in 0..a.rows() {
        let x = a.row(n);
        out.extend((0..w.rows()).map(|m| w.row(m).iter().zip(x).map(|(p, q)| p * q).sum::<f64>()));
    }
    out
}

fn widen(m: &Matrix<f32>) -> Matrix<f64> {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) as f64).expect("same shape")
}

/// Draws W (M x K) then A (N x K) from one stream, quantizes W, and compares every
/// requested variant (run in `f32`) to the exact `f64` product of the unquantized inputs.
pub fn run_nmse(req: &NmseRequest) -> Result<NmseReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let w = gaussian(req.m, req.k, &mut rng)?;
    let a = gaussian(req.n, req.k, &mut rng)?;
    let exact = product(&widen(&a), &widen(&w));

    let qw = quantize_rtn(&w, req.bits, req.group_size)?;
    let qw64 = QuantizedWeights::new(
        qw.m(),
        qw.k(),
        qw.bits(),
        qw.group_size(),
        qw.qvalues().to_vec(),
        qw.scales().iter().map(|&s| s as f64).collect(),
    )?;
    let baseline = reference_mpgemm(&widen(&a), &qw64)?;
    let quantization_only = nmse(&exact, baseline.as_slice());

    let pw = prepack(&qw, &req.tile)?;
    let mut variants = Vec::with_capacity(req.variants.len());
    for &v in &req.variants {
        let out = mpgemm(&a, &pw, &req.tile, &KernelOptions::new(v).threads(req.threads))?;
        let approx: Vec<f64> = out.as_slice().iter().map(|&x| x as f64).collect();
        variants.push(VariantNmse {
            variant: v.name().to_string(),
            nmse: nmse(&exact, &approx),
        });
    }
    Ok(NmseReport {
        m: req.m,
        k: req.k,
        n: req.n,
        bits: req.bits,
        group_size: req.group_size,
        g: req.tile.g,
        seed: req.seed,
        quantization_only,
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_examples() {
        assert_eq!(nmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(nmse(&[3.0, 4.0], &[0.0, 0.0]), 1.0);
        assert_eq!(nmse(&[2.0, 0.0], &[1.0, 0.0]), 0.25);
    }

    #[test]
    fn gaussian_is_seeded() {
        let a = gaussian(4, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gaussian(4, 8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let c = gaussian(4, 8, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn small_report() {
        let req = NmseRequest {
            m: 64,
            k: 256,
            n: 2,
            bits: 4,
            group_size: 32,
            tile: TileConfig::default(),
            variants: KernelVariant::ALL.to_vec(),
            threads: 1,
            seed: 1,
        };
        let r = run_nmse(&req).unwrap();
        assert_eq!(r.variants.len(), 4);
        let real = r.get(KernelVariant::ScalarReal).unwrap();
        assert!((real - r.quantization_only).abs() < 1e-6);
        let q8 = r.get(KernelVariant::VectorQuantized).unwrap();
        assert!(q8 >= r.quantization_only * 0.9 && q8 < 0.05);
        assert_eq!(run_nmse(&req).unwrap(), r);
    }
}
