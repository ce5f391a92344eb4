//! Weakly singular kernel `(t - s)^(alpha - 1) / Gamma(alpha)` and its exact
//! cell integrals on uniform grids.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{FgleError, Result};

/// Uniform partition `t_n = n h` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    horizon: f64,
    n_steps: usize,
}

impl GridSpec {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(FgleError::InvalidParameter("grid needs at least one step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(FgleError::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_n`; the last node is exactly `T`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.horizon
        } else {
            n as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }

    /// Grid with `n_steps / ratio` steps over the same horizon.
    pub fn coarsen(&self, ratio: usize) -> Result<Self> {
        if ratio == 0 || self.n_steps % ratio != 0 {
            return Err(FgleError::NonDivisibleRatio { ratio, n: self.n_steps });
        }
        Self::new(self.horizon, self.n_steps / ratio)
    }
}

/// `int_{t_{j-1}}^{t_j} (t_n - s)^(alpha - 1) ds` for `1 <= j <= n`.
pub fn em_weight(n: usize, j: usize, h: f64, alpha: f64) -> Result<f64> {
    if j == 0 || j > n {
        return Err(FgleError::InvalidParameter(format!("need 1 <= j <= n, got j={j}, n={n}")));
    }
    check_alpha(alpha)?;
    let far = (n - j + 1) as f64 * h;
    let near = (n - j) as f64 * h;
    Ok((far.powf(alpha) - near.powf(alpha)) / alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FgleError::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Lower-triangular EM weights `w[n][j]`.
///
/// The weight only depends on the lag `n - j`, so a single vector
/// `lag[k] = h^alpha ((k + 1)^alpha - k^alpha) / alpha` backs the whole matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    alpha: f64,
    grid: GridSpec,
    lag: Vec<f64>,
    /// `lag` reversed, so that history sums are contiguous dot products.
    lag_rev: Vec<f64>,
}

impl WeightMatrix {
    pub fn build(grid: GridSpec, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let n = grid.n_steps();
        let scale = grid.step().powf(alpha) / alpha;
        let mut lag = Vec::with_capacity(n);
        let mut prev = 0.0_f64;
        for k in 0..n {
            let next = ((k + 1) as f64).powf(alpha);
            lag.push(scale * (next - prev));
            prev = next;
        }
        let mut lag_rev = lag.clone();
        lag_rev.reverse();
        Ok(Self { alpha, grid, lag, lag_rev })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `w[n][j]`; panics outside `1 <= j <= n <= N`.
    #[inline]
    pub fn get(&self, n: usize, j: usize) -> f64 {
        assert!(j >= 1 && j <= n && n <= self.grid.n_steps(), "w[{n}][{j}] out of range");
        self.lag[n - j]
    }

    /// Weight of lag `k = n - j`.
    #[inline]
    pub fn by_lag(&self, k: usize) -> f64 {
        self.lag[k]
    }

    pub fn lags(&self) -> &[f64] {
        &self.lag
    }

    /// `(w[n][1], ..., w[n][n])` as a contiguous slice.
    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        let big_n = self.grid.n_steps();
        &self.lag_rev[big_n - n..]
    }

    pub fn row_sum(&self, n: usize) -> f64 {
        self.row(n).iter().sum()
    }
}

/// `(t - s)^(alpha - 1) / Gamma(alpha)` for `s < t`.
pub fn kernel_value(t: f64, s: f64, alpha: f64) -> Result<f64> {
    if s >= t {
        return Err(FgleError::InvalidParameter(format!("kernel needs s < t, got s={s}, t={t}")));
    }
    check_alpha(alpha)?;
    Ok((t - s).powf(alpha - 1.0) / gamma(alpha))
}

/// Dot product with a fixed 4-way accumulation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0_f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
