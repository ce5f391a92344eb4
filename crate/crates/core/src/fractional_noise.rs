//! Exact-in-law fractional Gaussian noise and fractional Brownian motion on
//! uniform grids.
//!
//! The default sampler embeds the fGn autocovariance in a circulant matrix of
//! size `2n` and diagonalises it with an FFT (Davies-Harte). When the
//! embedding has an eigenvalue below `-1e-10 * max eigenvalue` the sampler
//! falls back to a dense Cholesky factor of the Toeplitz covariance.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{FgleError, Result};

/// Relative tolerance for negative circulant eigenvalues.
pub const EIGENVALUE_TOLERANCE: f64 = 1e-10;

/// An fBm path on a uniform grid together with its increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub h: f64,
    pub hurst: f64,
    /// `W_H(t_j) - W_H(t_{j-1})`.
    pub increments: Vec<f64>,
    /// `W_H(t_j)`, starting at `W_H(0) = 0`.
    pub levels: Vec<f64>,
}

impl NoisePath {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }
}

/// Autocovariance of unit-step fGn at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let two_h = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

fn check_hurst(hurst: f64) -> Result<()> {
    // H = 1/2 is admitted so the Brownian case can serve as an oracle.
    if !(0.0 < hurst && hurst < 1.0) {
        return Err(FgleError::InvalidParameter(format!("Hurst index must lie in (0, 1), got {hurst}")));
    }
    Ok(())
}

/// Which construction the sampler ended up using.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FgnMethod {
    Circulant,
    Cholesky,
}

/// Build-time facts about the sampler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FgnDiagnostics {
    pub method: FgnMethod,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub clipped_eigenvalues: usize,
}

enum Backend {
    Circulant { scale: Vec<f64>, fft: Arc<dyn Fft<f64>> },
    Cholesky { lower: DMatrix<f64> },
}

/// Reusable unit-step fGn sampler of fixed length.
///
/// Immutable once built; every draw takes the caller's RNG, so one sampler
/// can serve many threads.
pub struct FgnSampler {
    n: usize,
    hurst: f64,
    backend: Backend,
    diagnostics: FgnDiagnostics,
}

impl std::fmt::Debug for FgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FgnSampler")
            .field("n", &self.n)
            .field("hurst", &self.hurst)
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

impl FgnSampler {
    pub fn new(n: usize, hurst: f64) -> Result<Self> {
        if n == 0 {
            return Err(FgleError::InvalidParameter("fGn length must be positive".into()));
        }
        check_hurst(hurst)?;
        let m = 2 * n;
        let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
        for k in 0..=n {
            row.push(Complex::new(fgn_autocovariance(k, hurst), 0.0));
        }
        for k in (1..n).rev() {
            row.push(Complex::new(fgn_autocovariance(k, hurst), 0.0));
        }
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let eig: Vec<f64> = row.iter().map(|c| c.re).collect();
        let max_eig = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min_eig = eig.iter().cloned().fold(f64::MAX, f64::min);
        let tol = EIGENVALUE_TOLERANCE * max_eig;
        let clipped = eig.iter().filter(|&&l| l < 0.0).count();

        if min_eig < -tol {
            Self::cholesky(n, hurst, min_eig, max_eig)
        } else {
            let scale = eig.iter().map(|&l| (l.max(0.0) / m as f64).sqrt()).collect();
            Ok(Self {
                n,
                hurst,
                backend: Backend::Circulant { scale, fft },
                diagnostics: FgnDiagnostics {
                    method: FgnMethod::Circulant,
                    min_eigenvalue: min_eig,
                    max_eigenvalue: max_eig,
                    clipped_eigenvalues: clipped,
                },
            })
        }
    }

    /// Dense Toeplitz Cholesky sampler, bypassing the circulant embedding.
    pub fn new_cholesky(n: usize, hurst: f64) -> Result<Self> {
        if n == 0 {
            return Err(FgleError::InvalidParameter("fGn length must be positive".into()));
        }
        check_hurst(hurst)?;
        Self::cholesky(n, hurst, f64::NAN, f64::NAN)
    }

    fn cholesky(n: usize, hurst: f64, min_eig: f64, max_eig: f64) -> Result<Self> {
        let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();
        let cov = DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or(FgleError::CholeskyFailure { jitter: 0.0 })?;
        Ok(Self {
            n,
            hurst,
            backend: Backend::Cholesky { lower: chol.l() },
            diagnostics: FgnDiagnostics {
                method: FgnMethod::Cholesky,
                min_eigenvalue: min_eig,
                max_eigenvalue: max_eig,
                clipped_eigenvalues: 0,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn diagnostics(&self) -> &FgnDiagnostics {
        &self.diagnostics
    }

    /// One unit-step fGn vector (variance 1 per entry).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.backend {
            Backend::Circulant { scale, fft } => {
                let mut buf: Vec<Complex<f64>> = scale
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..self.n].iter().map(|c| c.re).collect()
            }
            Backend::Cholesky { lower } => {
                let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
                (0..self.n)
                    .map(|i| (0..=i).map(|j| lower[(i, j)] * z[j]).sum())
                    .collect()
            }
        }
    }

    /// fBm path on a grid of step `h`.
    pub fn sample_path<R: Rng + ?Sized>(&self, h: f64, rng: &mut R) -> NoisePath {
        let unit = self.sample(rng);
        fgn_to_fbm(&unit, h, self.hurst, true)
    }
}

/// Convenience wrapper building a fresh sampler for a single draw.
pub fn sample_fgn<R: Rng + ?Sized>(n: usize, hurst: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(FgnSampler::new(n, hurst)?.sample(rng))
}

/// Cumulate increments into fBm levels. With `scale_unit_step` the input is
/// unit-step fGn and is rescaled by `h^H` first.
pub fn fgn_to_fbm(increments: &[f64], h: f64, hurst: f64, scale_unit_step: bool) -> NoisePath {
    let factor = if scale_unit_step { h.powf(hurst) } else { 1.0 };
    let mut levels = Vec::with_capacity(increments.len() + 1);
    levels.push(0.0);
    let mut acc = 0.0;
    for dx in increments {
        acc += dx * factor;
        levels.push(acc);
    }
    // Stored increments are the level differences themselves, so differencing
    // the levels recovers them bit for bit.
    let increments = levels.windows(2).map(|w| w[1] - w[0]).collect();
    NoisePath { h, hurst, increments, levels }
}

/// Sum `ratio` consecutive fine increments into one coarse increment.
pub fn aggregate_to_coarse(fine: &NoisePath, ratio: usize) -> Result<NoisePath> {
    let n = fine.n_steps();
    if ratio == 0 || n % ratio != 0 {
        return Err(FgleError::NonDivisibleRatio { ratio, n });
    }
    let increments = fine.increments.chunks(ratio).map(|c| c.iter().sum()).collect();
    let levels = fine.levels.iter().step_by(ratio).cloned().collect();
    Ok(NoisePath { h: fine.h * ratio as f64, hurst: fine.hurst, increments, levels })
}

/// Raw dump of rows of increments as little-endian `f64`, row-major.
pub fn write_increments_le<W: Write>(out: &mut W, rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        for x in row {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_increments_le`] for rows of length `row_len`.
pub fn read_increments_le(bytes: &[u8], row_len: usize) -> Result<Vec<Vec<f64>>> {
    if row_len == 0 || bytes.len() % (8 * row_len) != 0 {
        return Err(FgleError::InvalidParameter(format!(
            "{} bytes is not a whole number of rows of {row_len} f64",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(values.chunks(row_len).map(|c| c.to_vec()).collect())
}
