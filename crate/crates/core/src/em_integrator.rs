//! Euler-Maruyama scheme with exactly integrated kernel weights:
//! `x_n = x0 + (1/Gamma(a)) sum_{j<=n} f(x_{j-1}) w[n][j] + G(t_n)`.

use rayon::prelude::*;

use crate::convolution_sampler::subsample;
use crate::error::{FgleError, Result};
use crate::model::ModelParams;
use crate::volterra_kernel::{dot, GridSpec, WeightMatrix};

/// Largest tolerated fraction of non-finite paths.
pub const INVALID_PATH_QUOTA: f64 = 1e-3;

/// `M` paths of `N + 1` states, path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: GridSpec,
    states: Vec<f64>,
    valid: Vec<bool>,
}

impl PathEnsemble {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.valid.len()
    }

    /// States `x_0, ..., x_N` of path `i`.
    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.grid.n_steps() + 1;
        &self.states[i * w..(i + 1) * w]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn n_invalid(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// `x_N` for every path.
    pub fn terminal(&self) -> Vec<f64> {
        (0..self.n_paths()).map(|i| *self.path(i).last().expect("non-empty path")).collect()
    }
}

/// Shared tables for one grid.
#[derive(Debug, Clone)]
pub struct EmScheme {
    model: ModelParams,
    weights: WeightMatrix,
    inv_gamma: f64,
}

impl EmScheme {
    pub fn new(model: ModelParams, grid: GridSpec) -> Result<Self> {
        model.validate()?;
        let weights = WeightMatrix::build(grid, model.alpha)?;
        Ok(Self { model, weights, inv_gamma: 1.0 / model.gamma_alpha() })
    }

    pub fn grid(&self) -> &GridSpec {
        self.weights.grid()
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    /// Fill `out` (length `N + 1`) with one path driven by `g = (G(t_1), ..., G(t_N))`.
    /// Returns `false` if a state became non-finite.
    pub fn path_into(&self, g: &[f64], out: &mut [f64], fx: &mut Vec<f64>) -> bool {
        let n_steps = self.grid().n_steps();
        debug_assert_eq!(g.len(), n_steps);
        debug_assert_eq!(out.len(), n_steps + 1);
        let drift = self.model.drift;
        fx.clear();
        out[0] = self.model.x0;
        fx.push(drift.value(out[0]));
        for n in 1..=n_steps {
            let x = self.model.x0 + self.inv_gamma * dot(self.weights.row(n), &fx[..n]) + g[n - 1];
            if !x.is_finite() {
                out[n..].fill(f64::NAN);
                return false;
            }
            out[n] = x;
            if n < n_steps {
                fx.push(drift.value(x));
            }
        }
        true
    }

    /// One path as a fresh vector, with its validity flag.
    pub fn path(&self, g: &[f64]) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.grid().n_steps() + 1];
        let mut fx = Vec::with_capacity(out.len());
        let ok = self.path_into(g, &mut out, &mut fx);
        (out, ok)
    }
}

/// Error unless at most [`INVALID_PATH_QUOTA`] of `total` paths are invalid.
pub fn check_quota(invalid: usize, total: usize) -> Result<()> {
    if invalid as f64 > INVALID_PATH_QUOTA * total as f64 {
        return Err(FgleError::InvalidPathQuota { invalid, total });
    }
    Ok(())
}

/// Run the scheme on every row of `g_values` (each of length `N`).
pub fn run_em(model: &ModelParams, grid: &GridSpec, g_values: &[Vec<f64>]) -> Result<PathEnsemble> {
    let scheme = EmScheme::new(*model, *grid)?;
    let n = grid.n_steps();
    if let Some(bad) = g_values.iter().find(|g| g.len() != n) {
        return Err(FgleError::LengthMismatch { expected: n, got: bad.len() });
    }
    let mut states = vec![0.0; g_values.len() * (n + 1)];
    let valid: Vec<bool> = states
        .par_chunks_mut(n + 1)
        .zip(g_values.par_iter())
        .map_init(|| Vec::with_capacity(n + 1), |fx, (row, g)| scheme.path_into(g, row, fx))
        .collect();
    let ens = PathEnsemble { grid: *grid, states, valid };
    check_quota(ens.n_invalid(), ens.n_paths())?;
    Ok(ens)
}

/// Fine ensemble plus one coarse ensemble per ratio, all driven by the same
/// fine draws of `G`.
#[derive(Debug, Clone)]
pub struct CoupledEnsembles {
    pub fine: PathEnsemble,
    pub levels: Vec<(usize, PathEnsemble)>,
}

pub fn run_coupled(model: &ModelParams, fine_grid: &GridSpec, ratios: &[usize], g_fine: &[Vec<f64>]) -> Result<CoupledEnsembles> {
    let fine = run_em(model, fine_grid, g_fine)?;
    let mut levels = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let coarse_grid = fine_grid.coarsen(ratio)?;
        let g_coarse = g_fine.iter().map(|g| subsample(g, ratio)).collect::<Result<Vec<_>>>()?;
        levels.push((ratio, run_em(model, &coarse_grid, &g_coarse)?));
    }
    Ok(CoupledEnsembles { fine, levels })
}

/// RMS of `x_coarse(t_n) - x_fine(t_n)` over paths valid in both, for each
/// coarse index `n` in `at`.
pub fn strong_error(coarse: &PathEnsemble, fine: &PathEnsemble, at: &[usize]) -> Result<Vec<f64>> {
    if coarse.n_paths() != fine.n_paths() {
        return Err(FgleError::LengthMismatch { expected: fine.n_paths(), got: coarse.n_paths() });
    }
    let (nc, nf) = (coarse.grid().n_steps(), fine.grid().n_steps());
    if nf % nc != 0 || (coarse.grid().horizon() - fine.grid().horizon()).abs() > 1e-12 * fine.grid().horizon() {
        return Err(FgleError::GridMismatch(format!("coarse {nc} steps is not nested in fine {nf} steps")));
    }
    let ratio = nf / nc;
    at.iter()
        .map(|&n| {
            if n > nc {
                return Err(FgleError::InvalidParameter(format!("time index {n} beyond {nc}")));
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..fine.n_paths() {
                if coarse.is_valid(i) && fine.is_valid(i) {
                    let d = coarse.path(i)[n] - fine.path(i)[n * ratio];
                    sum += d * d;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(FgleError::DegenerateSamples("no path is valid in both ensembles".into()));
            }
            Ok((sum / count as f64).sqrt())
        })
        .collect()
}
