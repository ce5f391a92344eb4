//! Samplers for the Gaussian vector `(G(t_1), ..., G(t_N))`.
//!
//! The exact sampler factors the covariance from [`crate::hilbert_space`];
//! the Riemann sampler integrates the cell-averaged kernel against fGn and is
//! kept only as an independent construction for cross-checks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::gamma;

use crate::error::{FgleError, Result};
use crate::fractional_noise::{fgn_autocovariance, NoisePath};
use crate::hilbert_space::GCovariance;
use crate::stream::{path_stream, Purpose};
use crate::volterra_kernel::{GridSpec, WeightMatrix};

/// Diagonal jitter tried in turn, relative to the largest variance.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-14, 1e-12, 1e-10];

/// Paths per matrix-product block in batched sampling.
pub const SAMPLE_BLOCK: usize = 64;

/// Exact sampler for the convolution at the grid nodes.
#[derive(Debug, Clone)]
pub struct ConvolutionSampler {
    grid: GridSpec,
    alpha: f64,
    hurst: f64,
    sigma: f64,
    covariance: DMatrix<f64>,
    /// Transposed Cholesky factor (upper triangular), so `z^T U` samples a row.
    chol_t: DMatrix<f64>,
    jitter_used: f64,
}

fn check_model(alpha: f64, hurst: f64) -> Result<()> {
    if !(0.5..1.0).contains(&hurst) {
        return Err(FgleError::InvalidParameter(format!("Hurst index must lie in [1/2, 1), got {hurst}")));
    }
    if !(alpha > 1.0 - hurst && alpha <= 1.0) {
        return Err(FgleError::InvalidParameter(format!(
            "alpha must lie in (1 - H, 1], got alpha={alpha}, H={hurst}"
        )));
    }
    Ok(())
}

/// Lower Cholesky factor of `cov`, trying each rung of the jitter ladder.
/// Returns the factor and the absolute jitter added to the diagonal.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let max_diag = cov.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    if max_diag == 0.0 {
        return Ok((DMatrix::zeros(cov.nrows(), cov.ncols()), 0.0));
    }
    for &rel in &JITTER_LADDER {
        let jitter = rel * max_diag;
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.l(), jitter));
        }
    }
    Err(FgleError::CholeskyFailure { jitter: *JITTER_LADDER.last().expect("non-empty ladder") })
}

impl ConvolutionSampler {
    /// Build from an explicit covariance matrix (used by tests and by callers
    /// that cache matrices).
    pub fn from_covariance(grid: GridSpec, alpha: f64, hurst: f64, sigma: f64, covariance: DMatrix<f64>) -> Result<Self> {
        let n = grid.n_steps();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(FgleError::LengthMismatch { expected: n, got: covariance.nrows() });
        }
        let (chol, jitter_used) = cholesky_with_jitter(&covariance)?;
        Ok(Self { grid, alpha, hurst, sigma, covariance, chol_t: chol.transpose(), jitter_used })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        self.chol_t.transpose()
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// `L z` for a given standard normal vector `z`.
    pub fn transform(&self, normals: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n_steps();
        if normals.len() != n {
            return Err(FgleError::LengthMismatch { expected: n, got: normals.len() });
        }
        Ok((0..n)
            .map(|i| (0..=i).map(|j| self.chol_t[(j, i)] * normals[j]).sum())
            .collect())
    }

    /// One draw of `(G(t_1), ..., G(t_N))`.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.grid.n_steps()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&z).expect("length matches grid")
    }

    /// Draws for paths `first..first + count`, path `i` using its own stream
    /// under `seed`. Row `k` of the result is path `first + k`.
    ///
    /// Paths are always generated in aligned blocks of [`SAMPLE_BLOCK`], so a
    /// path's value does not depend on the requested range.
    pub fn sample_paths(&self, seed: u64, first: usize, count: usize) -> Vec<Vec<f64>> {
        let n = self.grid.n_steps();
        let end = first + count;
        let mut out = Vec::with_capacity(count);
        let mut block = first / SAMPLE_BLOCK;
        while block * SAMPLE_BLOCK < end {
            let lo = block * SAMPLE_BLOCK;
            let mut z = Vec::with_capacity(SAMPLE_BLOCK * n);
            for i in lo..lo + SAMPLE_BLOCK {
                let mut rng = path_stream(seed, Purpose::Convolution, i as u64);
                z.extend((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            let g = DMatrix::from_row_slice(SAMPLE_BLOCK, n, &z) * &self.chol_t;
            for i in lo.max(first)..(lo + SAMPLE_BLOCK).min(end) {
                out.push(g.row(i - lo).iter().cloned().collect());
            }
            block += 1;
        }
        out
    }
}

/// Exact sampler for `G` on `grid`.
pub fn build_exact_sampler(grid: GridSpec, alpha: f64, hurst: f64, sigma: f64) -> Result<ConvolutionSampler> {
    check_model(alpha, hurst)?;
    let cov = GCovariance::new(alpha, hurst, sigma)?.matrix(&grid)?;
    ConvolutionSampler::from_covariance(grid, alpha, hurst, sigma, cov)
}

/// `sample_exact` as a free function.
pub fn sample_exact<R: Rng + ?Sized>(sampler: &ConvolutionSampler, rng: &mut R) -> Vec<f64> {
    sampler.sample_exact(rng)
}

/// `G~(t_n) = sigma / Gamma(alpha) * sum_j (w[n][j] / h) dW_H[j]`.
pub fn sample_riemann(grid: &GridSpec, alpha: f64, sigma: f64, noise: &NoisePath) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    if noise.n_steps() != n {
        return Err(FgleError::GridMismatch(format!("noise has {} steps, grid has {n}", noise.n_steps())));
    }
    if (noise.h - grid.step()).abs() > 1e-12 * grid.step() {
        return Err(FgleError::GridMismatch(format!("noise step {} vs grid step {}", noise.h, grid.step())));
    }
    let w = WeightMatrix::build(*grid, alpha)?;
    let factor = sigma / (gamma(alpha) * grid.step());
    Ok((1..=n)
        .map(|k| factor * crate::volterra_kernel::dot(w.row(k), &noise.increments[..k]))
        .collect())
}

/// Exact covariance matrix of the Riemann-sum sampler's output.
pub fn riemann_covariance(grid: &GridSpec, alpha: f64, hurst: f64, sigma: f64) -> Result<DMatrix<f64>> {
    let n = grid.n_steps();
    let h = grid.step();
    let w = WeightMatrix::build(*grid, alpha)?;
    let factor = sigma / (gamma(alpha) * h);
    let kernel = DMatrix::from_fn(n, n, |i, j| if j <= i { factor * w.get(i + 1, j + 1) } else { 0.0 });
    let noise_scale = h.powf(2.0 * hurst);
    let gam: Vec<f64> = (0..n).map(|k| noise_scale * fgn_autocovariance(k, hurst)).collect();
    let fgn_cov = DMatrix::from_fn(n, n, |i, j| gam[i.abs_diff(j)]);
    Ok(&kernel * fgn_cov * kernel.transpose())
}

/// Keep every `ratio`-th entry: `coarse[k] = fine[(k + 1) ratio - 1]`.
pub fn subsample(values: &[f64], ratio: usize) -> Result<Vec<f64>> {
    if ratio == 0 || values.len() % ratio != 0 {
        return Err(FgleError::NonDivisibleRatio { ratio, n: values.len() });
    }
    Ok(values.iter().skip(ratio - 1).step_by(ratio).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractional_noise::{fgn_to_fbm, FgnSampler};
    use approx::assert_relative_eq;

    #[test]
    fn factor_reproduces_covariance() {
        let grid = GridSpec::new(1.0, 24).unwrap();
        let s = build_exact_sampler(grid, 0.7, 0.7, 1.2).unwrap();
        let l = s.cholesky_lower();
        let mut target = s.covariance().clone();
        for i in 0..24 {
            target[(i, i)] += s.jitter_used();
        }
        let diff = (&l * l.transpose() - &target).norm() / target.norm();
        assert!(diff < 1e-8, "relative Frobenius error {diff}");
        let max_diag = s.covariance().diagonal().max();
        assert!(s.jitter_used() <= 1e-8 * max_diag);
    }

    #[test]
    fn transform_examples() {
        let grid = GridSpec::new(1.0, 3).unwrap();
        let s = ConvolutionSampler::from_covariance(grid, 1.0, 0.5, 1.0, DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.transform(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(s.transform(&[0.3, -1.0, 2.0]).unwrap(), vec![0.3, -1.0, 2.0]);
        assert!(s.transform(&[0.0; 2]).is_err());
    }

    #[test]
    fn batched_and_single_draws_agree() {
        let grid = GridSpec::new(1.0, 16).unwrap();
        let s = build_exact_sampler(grid, 0.8, 0.6, 1.0).unwrap();
        let batch = s.sample_paths(11, 3, 70);
        assert_eq!(batch.len(), 70);
        for (k, row) in batch.iter().enumerate().step_by(17) {
            let mut rng = path_stream(11, Purpose::Convolution, (3 + k) as u64);
            let single = s.sample_exact(&mut rng);
            for (a, b) in row.iter().zip(&single) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
        // block layout does not depend on where the batch starts
        let again = s.sample_paths(11, 5, 3);
        assert_eq!(again[0], batch[2]);
        assert_eq!(s.sample_paths(11, 3, 70), batch);
    }

    #[test]
    fn single_node_is_normal_with_closed_form_variance() {
        let grid = GridSpec::new(0.5, 1).unwrap();
        let s = build_exact_sampler(grid, 0.7, 0.7, 1.0).unwrap();
        let var = GCovariance::new(0.7, 0.7, 1.0).unwrap().variance(0.5);
        assert_relative_eq!(s.covariance()[(0, 0)], var, max_relative = 1e-14);
        let m = 40_000;
        let emp: f64 = s.sample_paths(1, 0, m).iter().map(|r| r[0] * r[0]).sum::<f64>() / m as f64;
        assert!((emp / var - 1.0).abs() < 4.0 * (2.0 / m as f64).sqrt());
    }

    #[test]
    fn riemann_examples() {
        let grid = GridSpec::new(1.0, 8).unwrap();
        let noise = fgn_to_fbm(&[0.1, -0.2, 0.3, 0.05, -0.4, 0.2, 0.0, 0.15], grid.step(), 0.7, false);
        let g = sample_riemann(&grid, 1.0, 2.0, &noise).unwrap();
        for (n, v) in g.iter().enumerate() {
            assert_relative_eq!(*v, 2.0 * noise.levels[n + 1], epsilon = 1e-14);
        }
        let zero = fgn_to_fbm(&[0.0; 8], grid.step(), 0.7, false);
        assert!(sample_riemann(&grid, 0.6, 1.0, &zero).unwrap().iter().all(|&x| x == 0.0));
        let other = GridSpec::new(2.0, 8).unwrap();
        assert!(sample_riemann(&other, 0.6, 1.0, &zero).is_err());
    }

    #[test]
    fn riemann_covariance_matches_its_sampler() {
        let grid = GridSpec::new(1.0, 12).unwrap();
        let cov = riemann_covariance(&grid, 0.7, 0.7, 1.0).unwrap();
        let fgn = FgnSampler::new(12, 0.7).unwrap();
        let m = 40_000;
        let mut acc = 0.0;
        for i in 0..m {
            let mut rng = path_stream(5, Purpose::FractionalNoise, i);
            let noise = fgn.sample_path(grid.step(), &mut rng);
            let g = sample_riemann(&grid, 0.7, 1.0, &noise).unwrap();
            acc += g[11] * g[3];
        }
        let emp = acc / m as f64;
        let c = cov[(11, 3)];
        let se = ((cov[(11, 11)] * cov[(3, 3)] + c * c) / m as f64).sqrt();
        assert!((emp - c).abs() < 4.0 * se, "{emp} vs {c}");
    }

    #[test]
    fn subsample_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(subsample(&v, 1).unwrap(), v.to_vec());
        assert_eq!(subsample(&v, 2).unwrap(), vec![2.0, 4.0]);
        assert!(subsample(&v, 3).is_err());
    }

    #[test]
    fn subsampled_fine_covariance_is_coarse_covariance() {
        let fine = GridSpec::new(1.0, 16).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        let g = GCovariance::new(0.7, 0.7, 1.0).unwrap();
        let cf = g.matrix(&fine).unwrap();
        let cc = g.matrix(&coarse).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(cf[(4 * i + 3, 4 * j + 3)], cc[(i, j)], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn brownian_grid_values() {
        let grid = GridSpec::new(2.0, 4).unwrap();
        let s = build_exact_sampler(grid, 1.0, 0.5, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(s.covariance()[(i, j)], grid.time(i.min(j) + 1), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn deterministic_zero_noise() {
        let grid = GridSpec::new(1.0, 4).unwrap();
        let s = build_exact_sampler(grid, 0.7, 0.7, 0.0).unwrap();
        assert_eq!(s.jitter_used(), 0.0);
        assert!(s.sample_paths(3, 0, 2).iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_out_of_range_model() {
        let grid = GridSpec::new(1.0, 4).unwrap();
        assert!(build_exact_sampler(grid, 0.2, 0.7, 1.0).is_err());
        assert!(build_exact_sampler(grid, 0.7, 0.3, 1.0).is_err());
    }
}
