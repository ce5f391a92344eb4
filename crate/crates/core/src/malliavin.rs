//! Discrete Malliavin derivative of the EM states.
//!
//! For `r < t_n`,
//! `D_r x_n = (1/Gamma(a)) sum_{j: t_{j-1} > r} f'(x_{j-1}) D_r x_{j-1} w[n][j] + (sigma/Gamma(a)) (t_n - r)^(a-1)`.
//! Unrolling the recursion gives
//! `D_r x_n = (sigma/Gamma(a)) sum_{i: t_i > r} c_i (t_i - r)^(a-1)`
//! with coefficients `c` that do not depend on `r`. Each term is the
//! integrand of `G(t_i)`, so `||D x_n||_H^2 = c^T Sigma_G c` exactly.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{FgleError, Result};
use crate::hilbert_space::{increment_covariance, GCovariance};
use crate::model::ModelParams;
use crate::quadrature::TanhSinh;
use crate::volterra_kernel::{dot, GridSpec, WeightMatrix};

/// Extra points, each half the previous distance, packed against `t_n`.
pub const TAIL_POINTS: usize = 4;

/// `D_r x_n` for `n = 0..=N` at a single `r`.
pub fn malliavin_derivative(states: &[f64], model: &ModelParams, grid: &GridSpec, r: f64) -> Result<Vec<f64>> {
    let n_steps = grid.n_steps();
    if states.len() != n_steps + 1 {
        return Err(FgleError::LengthMismatch { expected: n_steps + 1, got: states.len() });
    }
    if !(r >= 0.0 && r < grid.horizon()) {
        return Err(FgleError::InvalidParameter(format!("r must lie in [0, T), got {r}")));
    }
    let w = WeightMatrix::build(*grid, model.alpha)?;
    let inv_gamma = 1.0 / model.gamma_alpha();
    let scale = model.sigma * inv_gamma;
    let mut d = vec![0.0; n_steps + 1];
    // weighted[j] = f'(x_j) D_r x_j, zero while t_j <= r
    let mut weighted = vec![0.0; n_steps];
    for n in 1..=n_steps {
        let t = grid.time(n);
        if t <= r {
            continue;
        }
        d[n] = inv_gamma * dot(w.row(n), &weighted[..n]) + scale * (t - r).powf(model.alpha - 1.0);
        if n < n_steps {
            weighted[n] = model.drift.derivative(states[n]) * d[n];
        }
    }
    Ok(d)
}

/// Coefficients `c_1, ..., c_n` of `D_. x_n` in the kernel expansion,
/// from a backward sweep: `c_n = 1`,
/// `c_i = (1/Gamma(a)) f'(x_i) sum_{m > i} w[m][i+1] c_m`.
pub fn kernel_coefficients(states: &[f64], model: &ModelParams, weights: &WeightMatrix, n: usize) -> Result<Vec<f64>> {
    let n_steps = weights.grid().n_steps();
    if states.len() != n_steps + 1 {
        return Err(FgleError::LengthMismatch { expected: n_steps + 1, got: states.len() });
    }
    if n == 0 || n > n_steps {
        return Err(FgleError::InvalidParameter(format!("target index must lie in 1..={n_steps}, got {n}")));
    }
    let inv_gamma = 1.0 / model.gamma_alpha();
    let lags = weights.lags();
    // c[k] holds c_{k+1}
    let mut c = vec![0.0; n];
    c[n - 1] = 1.0;
    for i in (1..n).rev() {
        let fp = model.drift.derivative(states[i]);
        if fp != 0.0 {
            c[i - 1] = inv_gamma * fp * dot(&lags[..n - i], &c[i..n]);
        }
    }
    Ok(c)
}

/// `D_r x_n` evaluated from its kernel expansion.
pub fn derivative_from_coefficients(coeffs: &[f64], model: &ModelParams, grid: &GridSpec, r: f64) -> f64 {
    let scale = model.sigma / model.gamma_alpha();
    let mut acc = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let t = grid.time(k + 1);
        if t > r {
            acc += c * (t - r).powf(model.alpha - 1.0);
        }
    }
    scale * acc
}

/// `c^T Sigma c` over the leading `c.len()` nodes of `cov`.
pub fn h_norm_sq(coeffs: &[f64], cov: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for (i, ci) in coeffs.iter().enumerate() {
        if *ci == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (j, cj) in coeffs[..i].iter().enumerate() {
            row += cov[(i, j)] * cj;
        }
        total += ci * (cov[(i, i)] * ci + 2.0 * row);
    }
    total
}

/// Principal submatrix at the nodes shared with a grid `ratio` times coarser.
pub fn coarse_covariance(fine: &DMatrix<f64>, ratio: usize) -> Result<DMatrix<f64>> {
    let n = fine.nrows();
    if ratio == 0 || n % ratio != 0 {
        return Err(FgleError::NonDivisibleRatio { ratio, n });
    }
    let m = n / ratio;
    Ok(DMatrix::from_fn(m, m, |i, j| fine[((i + 1) * ratio - 1, (j + 1) * ratio - 1)]))
}

/// Sample points in `[0, t_n)`: `2^level` evenly spread points per cell at
/// cell-relative positions `(2k + 1) / 2^(level + 1)`, plus
/// [`TAIL_POINTS`] geometrically packed points in front of `t_n`.
pub fn r_subgrid(grid: &GridSpec, n: usize, level: u32) -> Vec<f64> {
    let h = grid.step();
    let per_cell = 1usize << level;
    let spacing = h / per_cell as f64;
    let mut pts = Vec::with_capacity(n * per_cell + TAIL_POINTS);
    for cell in 0..n {
        let left = grid.time(cell);
        for k in 0..per_cell {
            pts.push(left + (k as f64 + 0.5) * spacing);
        }
    }
    let t = grid.time(n);
    let mut gap = 0.5 * spacing;
    for _ in 0..TAIL_POINTS {
        gap *= 0.5;
        pts.push(t - gap);
    }
    pts
}

/// Derivative values on an r-subgrid for one path.
#[derive(Debug, Clone)]
pub struct MalliavinField {
    pub grid: GridSpec,
    pub r_subgrid: Vec<f64>,
    /// `values[m][n] = D_{r_m} x_n`.
    pub values: Vec<Vec<f64>>,
    /// Indices `n` at which the H-norm was computed.
    pub norm_times: Vec<usize>,
    /// `||D x_n||_H` for each entry of `norm_times`.
    pub h_norms: Vec<f64>,
}

impl MalliavinField {
    /// Values by the pointwise recursion; H-norms at `norm_times` from the
    /// kernel expansion against `cov`, the `G` covariance on `grid`.
    pub fn compute(
        states: &[f64],
        model: &ModelParams,
        grid: &GridSpec,
        r_subgrid: Vec<f64>,
        norm_times: &[usize],
        cov: &DMatrix<f64>,
    ) -> Result<Self> {
        if r_subgrid.windows(2).any(|p| p[0] >= p[1]) {
            return Err(FgleError::InvalidParameter("r-subgrid must be strictly increasing".into()));
        }
        let values = r_subgrid
            .iter()
            .map(|&r| malliavin_derivative(states, model, grid, r))
            .collect::<Result<Vec<_>>>()?;
        let weights = WeightMatrix::build(*grid, model.alpha)?;
        let h_norms = norm_times
            .iter()
            .map(|&n| Ok(h_norm_sq(&kernel_coefficients(states, model, &weights, n)?, cov).max(0.0).sqrt()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: *grid, r_subgrid, values, norm_times: norm_times.to_vec(), h_norms })
    }
}

/// `max |D_{r_m} x_n| (t_n - r_m)^(1 - a)` over pairs with `r_m < t_n`.
pub fn check_upper_bound(field: &MalliavinField, model: &ModelParams) -> f64 {
    let mut best = 0.0_f64;
    for (m, &r) in field.r_subgrid.iter().enumerate() {
        for n in 1..=field.grid.n_steps() {
            let t = field.grid.time(n);
            if r < t {
                best = best.max(field.values[m][n].abs() * (t - r).powf(1.0 - model.alpha));
            }
        }
    }
    best
}

/// `min_paths ||D x_N||_H^2 / h^(2a + 2H - 2)` from squared terminal norms.
pub fn check_positivity(norms_sq: &[f64], model: &ModelParams, grid: &GridSpec) -> f64 {
    let scale = grid.step().powf(2.0 * model.rate_exponent());
    norms_sq.iter().cloned().fold(f64::INFINITY, f64::min) / scale
}

/// Terminal state and kernel coefficients of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDerivative {
    pub x_n: f64,
    pub coeffs: Vec<f64>,
}

impl TerminalDerivative {
    pub fn from_path(states: &[f64], model: &ModelParams, weights: &WeightMatrix) -> Result<Self> {
        let n = weights.grid().n_steps();
        Ok(Self { x_n: states[n], coeffs: kernel_coefficients(states, model, weights, n)? })
    }
}

/// Per-path `|x_N^c - x_N^f|^2 + ||D x_N^c - D x_N^f||_H^2`, with the coarse
/// expansion embedded at every `ratio`-th fine node.
pub fn d12_terms(coarse: &[TerminalDerivative], fine: &[TerminalDerivative], fine_cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    if coarse.len() != fine.len() {
        return Err(FgleError::LengthMismatch { expected: fine.len(), got: coarse.len() });
    }
    let nf = fine_cov.nrows();
    let terms = coarse
        .par_iter()
        .zip(fine.par_iter())
        .map(|(c, f)| {
            let nc = c.coeffs.len();
            if f.coeffs.len() != nf || nc == 0 || nf % nc != 0 {
                return Err(FgleError::GridMismatch(format!(
                    "coarse expansion of {nc} nodes is not nested in {nf} fine nodes"
                )));
            }
            let ratio = nf / nc;
            let mut delta = f.coeffs.clone();
            for (k, ck) in c.coeffs.iter().enumerate() {
                delta[(k + 1) * ratio - 1] -= ck;
            }
            let dx = c.x_n - f.x_n;
            Ok(dx * dx + h_norm_sq(&delta, fine_cov).max(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(terms)
}

/// Mean of [`d12_terms`].
pub fn d12_error_sq(coarse: &[TerminalDerivative], fine: &[TerminalDerivative], fine_cov: &DMatrix<f64>) -> Result<f64> {
    let terms = d12_terms(coarse, fine, fine_cov)?;
    if terms.is_empty() {
        return Err(FgleError::DegenerateSamples("no paths".into()));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// `||D x_n||_H^2` from subgrid values alone: piecewise constant between
/// midpoints of neighbouring subgrid points, and `K (t_n - r)^(a-1)` on the
/// last piece, with `K` matched at the last subgrid point.
pub fn h_norm_sq_piecewise(values: &[f64], r_subgrid: &[f64], model: &ModelParams, t_n: f64) -> Result<f64> {
    if values.len() != r_subgrid.len() {
        return Err(FgleError::LengthMismatch { expected: r_subgrid.len(), got: values.len() });
    }
    // zero extension outside [0, t_n)
    let pts: Vec<(f64, f64)> = r_subgrid.iter().cloned().zip(values.iter().cloned()).filter(|(r, _)| *r < t_n).collect();
    let Some(&(r_last, v_last)) = pts.last() else {
        return Ok(0.0);
    };
    let (a, hurst) = (model.alpha, model.hurst);
    let mut edges = Vec::with_capacity(pts.len() + 1);
    edges.push(0.0);
    for p in pts.windows(2) {
        edges.push(0.5 * (p[0].0 + p[1].0));
    }
    let tail = t_n - edges[edges.len() - 1];
    let k = v_last * (t_n - r_last).powf(1.0 - a);
    let steps: Vec<(f64, f64, f64)> = (0..pts.len() - 1).map(|m| (edges[m], edges[m + 1], pts[m].1)).collect();

    let mut total = 0.0;
    for (i, &(a0, b0, v0)) in steps.iter().enumerate() {
        total += v0 * v0 * increment_covariance(a0, b0, a0, b0, hurst)?;
        for &(a1, b1, v1) in &steps[..i] {
            total += 2.0 * v0 * v1 * increment_covariance(a0, b0, a1, b1, hurst)?;
        }
    }
    // tail against itself: Gamma(a)^2 Var G(tail) for unit sigma
    let unit = GCovariance::new(a, hurst, 1.0)?;
    let g = model.gamma_alpha();
    total += k * k * g * g * unit.variance(tail);
    // tail against each step on [a0, b0] below it
    let rule = TanhSinh::new(8);
    let e = 2.0 * hurst - 1.0;
    for &(a0, b0, v0) in &steps {
        let (far, near) = (t_n - a0, t_n - b0);
        let (integral, _) = rule.integrate(4, 1e-12, |node| {
            let s = tail * node.y.powf(1.0 / a);
            (far - s).powf(e) - (near - s).max(0.0).powf(e)
        });
        total += 2.0 * k * v0 * hurst * tail.powf(a) / a * integral;
    }
    Ok(total)
}
