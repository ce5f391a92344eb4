//! Covariance structure of fractional Brownian motion: increment covariances,
//! the `H` inner product of step functions, and the covariance of the
//! singular stochastic convolution
//!
//! ```text
//! G(t) = sigma / Gamma(alpha) * int_0^t (t - s)^(alpha - 1) dW_H(s).
//! ```
//!
//! With `q = 2H - 1`, `p = 2 - alpha - 2H` and `K = sigma^2 H (2H - 1) / Gamma(alpha)^2`,
//! substituting `a = t - u`, `b = s - v` turns `Cov(G(t), G(s))` for `s <= t` into
//!
//! ```text
//! K * int_0^s b^(alpha - 1) J_t(b + t - s) db,   J_t(c) = int_0^t a^(alpha - 1) |c - a|^(q - 1) da.
//! ```
//!
//! `J_t(c) = t^(-p) j(c / t)` where `j` has a closed form as a rapidly
//! convergent power series, so only the outer integral is numerical. The
//! diagonal is fully closed:
//! `Var G(t) = K * 2 B(alpha, q) / (2 alpha + q - 1) * t^(2 alpha + q - 1)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

use crate::error::{FgleError, Result};
use crate::quadrature::{Node, TanhSinh};
use crate::volterra_kernel::GridSpec;

/// Relative agreement required between two quadrature refinement levels.
pub const QUADRATURE_TOLERANCE: f64 = 1e-6;

const START_LEVEL: usize = 3;
const MAX_LEVEL: usize = 7;

/// `E[(W(b) - W(a)) (W(d) - W(c))]` for `a <= b`, `c <= d`.
pub fn increment_covariance(a: f64, b: f64, c: f64, d: f64, hurst: f64) -> Result<f64> {
    if a > b || c > d {
        return Err(FgleError::InvalidParameter(format!(
            "reversed interval endpoints: [{a}, {b}], [{c}, {d}]"
        )));
    }
    let two_h = 2.0 * hurst;
    let pw = |x: f64| x.abs().powf(two_h);
    Ok(0.5 * (pw(b - c) + pw(a - d) - pw(b - d) - pw(a - c)))
}

/// The `H` bilinear form restricted to functions constant on grid cells.
#[derive(Debug, Clone)]
pub struct HBilinearForm {
    hurst: f64,
    grid: GridSpec,
    /// Gram matrix of the cell indicators; it only depends on `|i - j|`.
    lag_gram: Vec<f64>,
}

impl HBilinearForm {
    pub fn new(hurst: f64, grid: GridSpec) -> Result<Self> {
        if !(0.0 < hurst && hurst < 1.0) {
            return Err(FgleError::InvalidParameter(format!("Hurst index must lie in (0, 1), got {hurst}")));
        }
        let h = grid.step();
        let lag_gram = (0..grid.n_steps())
            .map(|k| increment_covariance(0.0, h, k as f64 * h, (k + 1) as f64 * h, hurst))
            .collect::<Result<_>>()?;
        Ok(Self { hurst, grid, lag_gram })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `<phi, psi>_H` for cell values `phi`, `psi`.
    pub fn inner(&self, phi: &[f64], psi: &[f64]) -> Result<f64> {
        let n = self.grid.n_steps();
        for v in [phi, psi] {
            if v.len() != n {
                return Err(FgleError::LengthMismatch { expected: n, got: v.len() });
            }
        }
        let mut total = 0.0;
        for (i, &a) in phi.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row: f64 = psi.iter().enumerate().map(|(j, &b)| self.lag_gram[i.abs_diff(j)] * b).sum();
            total += a * row;
        }
        Ok(total)
    }
}

/// One-shot `<phi, psi>_H` for step functions on `grid`.
pub fn h_inner_product_step(phi: &[f64], psi: &[f64], hurst: f64, grid: &GridSpec) -> Result<f64> {
    HBilinearForm::new(hurst, *grid)?.inner(phi, psi)
}

/// Evaluator for `Cov(G(t), G(s))` at fixed `(alpha, H, sigma)`.
#[derive(Debug, Clone)]
pub struct GCovariance {
    alpha: f64,
    hurst: f64,
    sigma: f64,
    /// `sigma^2 H (2H - 1) / Gamma(alpha)^2`, or `sigma^2 / Gamma(alpha)^2` when `H = 1/2`.
    prefactor: f64,
    p: f64,
    q: f64,
    beta_aq: f64,
    /// `B(alpha, q) + F(1/2)`.
    head: f64,
    series_low: Vec<f64>,
    series_high: Vec<f64>,
    /// `(y^(1/alpha), 1 - y^(1/alpha), weight)` per tanh-sinh node, grouped by level.
    nodes: Vec<Vec<(f64, f64, f64)>>,
    brownian: bool,
}

const SERIES_TERMS: usize = 64;

impl GCovariance {
    pub fn new(alpha: f64, hurst: f64, sigma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(FgleError::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        if !(0.5..1.0).contains(&hurst) {
            return Err(FgleError::InvalidParameter(format!("Hurst index must lie in [1/2, 1), got {hurst}")));
        }
        if alpha + hurst <= 1.0 {
            return Err(FgleError::InvalidParameter(format!(
                "need alpha + H > 1, got alpha={alpha}, H={hurst}"
            )));
        }
        if !sigma.is_finite() {
            return Err(FgleError::InvalidParameter("sigma must be finite".into()));
        }
        let g = gamma(alpha);
        let brownian = hurst == 0.5;
        let q = 2.0 * hurst - 1.0;
        let p = 2.0 - alpha - 2.0 * hurst;
        let prefactor = if brownian {
            sigma * sigma / (g * g)
        } else {
            sigma * sigma * hurst * q / (g * g)
        };

        // F(x) = int_x^1 z^(p-1) (1-z)^(q-1) dz:
        //   x >= 1/2: sum_k (1-p)_k / k! (1-x)^(q+k) / (q+k)
        //   x <  1/2: F(1/2) + sum_k (1-q)_k / k! (2^-(p+k) - x^(p+k)) / (p+k)
        let mut series_high = Vec::with_capacity(SERIES_TERMS);
        let mut series_low = Vec::with_capacity(SERIES_TERMS);
        let (mut a, mut b) = (1.0_f64, 1.0_f64);
        for k in 0..SERIES_TERMS {
            if k > 0 {
                a *= (k as f64 - p) / k as f64;
                b *= (k as f64 - q) / k as f64;
            }
            series_high.push(a);
            series_low.push(b);
        }
        let beta_aq = if brownian { 0.0 } else { beta(alpha, q) };
        let f_half: f64 = series_high
            .iter()
            .enumerate()
            .map(|(k, c)| c * 0.5_f64.powf(q + k as f64) / (q + k as f64))
            .sum();
        let head = beta_aq + f_half;

        let rule = TanhSinh::new(MAX_LEVEL);
        let nodes = (0..=MAX_LEVEL)
            .map(|level| {
                rule.level_nodes(level)
                    .iter()
                    .map(|n| {
                        let (ya, ya_bar) = map_node(n, alpha);
                        (ya, ya_bar, n.weight)
                    })
                    .collect()
            })
            .collect();

        Ok(Self { alpha, hurst, sigma, prefactor, p, q, beta_aq, head, series_low, series_high, nodes, brownian })
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

    /// Exponent `2 alpha + 2H - 2` of the variance scaling law.
    pub fn scaling_exponent(&self) -> f64 {
        2.0 * self.alpha + 2.0 * self.hurst - 2.0
    }

    /// `C_G` with `Var G(t) = sigma^2 C_G t^(2 alpha + 2H - 2)`.
    pub fn scaling_constant(&self) -> f64 {
        let g = gamma(self.alpha);
        if self.brownian {
            1.0 / (g * g * (2.0 * self.alpha - 1.0))
        } else {
            self.hurst * self.q * 2.0 * beta(self.alpha, self.q) / (g * g * self.scaling_exponent())
        }
    }

    /// `Var G(t)` in closed form.
    pub fn variance(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.sigma * self.sigma * self.scaling_constant() * t.powf(self.scaling_exponent())
    }

    /// `x^(-p) [B(alpha, q) + F(x)]` given `x` and `1 - x`.
    fn unit_inner(&self, x: f64, x_bar: f64) -> f64 {
        let (p, q) = (self.p, self.q);
        if x_bar <= 0.5 {
            let mut f = 0.0;
            let mut pw = x_bar.powf(q);
            for (k, c) in self.series_high.iter().enumerate() {
                let term = c * pw / (q + k as f64);
                f += term;
                if term.abs() < 1e-17 * f.abs() {
                    break;
                }
                pw *= x_bar;
            }
            x.powf(-p) * (self.beta_aq + f)
        } else {
            let log_ratio = (0.5 / x).ln();
            let growth = (p * log_ratio).exp();
            let lead = if p.abs() < 1e-12 { log_ratio } else { (p * log_ratio).exp_m1() / p };
            let mut sum = lead;
            let mut half_k = 1.0;
            let mut x_k = 1.0;
            for (k, c) in self.series_low.iter().enumerate().skip(1) {
                half_k *= 0.5;
                x_k *= x;
                let term = c * (growth * half_k - x_k) / (p + k as f64);
                sum += term;
                if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                    break;
                }
            }
            x.powf(-p) * self.head + sum
        }
    }

    /// `Cov(G(t), G(s))` for `0 < s <= t`, with the final relative change
    /// between quadrature levels.
    pub fn covariance_with_error(&self, t: f64, s: f64) -> Result<(f64, f64)> {
        if !(s > 0.0 && s <= t) {
            return Err(FgleError::InvalidParameter(format!("need 0 < s <= t, got s={s}, t={t}")));
        }
        if s == t {
            return Ok((self.variance(t), 0.0));
        }
        let rho = s / t;
        let level_sum = |level: usize| -> f64 {
            self.nodes[level]
                .iter()
                .map(|&(ya, ya_bar, w)| {
                    let x_bar = rho * ya_bar;
                    let v = if self.brownian {
                        (1.0 - x_bar).powf(self.alpha - 1.0)
                    } else {
                        self.unit_inner((1.0 - rho) + rho * ya, x_bar)
                    };
                    w * v
                })
                .sum()
        };
        let mut estimate = level_sum(0);
        for level in 1..=START_LEVEL {
            estimate = 0.5 * estimate + level_sum(level);
        }
        let mut change = f64::INFINITY;
        for level in START_LEVEL + 1..=MAX_LEVEL {
            let next = 0.5 * estimate + level_sum(level);
            change = (next - estimate).abs() / next.abs().max(f64::MIN_POSITIVE);
            estimate = next;
            if change <= QUADRATURE_TOLERANCE {
                break;
            }
        }
        if change > QUADRATURE_TOLERANCE {
            return Err(FgleError::QuadratureNonConvergence { rel_change: change, tol: QUADRATURE_TOLERANCE });
        }
        let scale = if self.brownian {
            t.powf(2.0 * self.alpha - 1.0)
        } else {
            t.powf(self.scaling_exponent())
        };
        Ok((self.prefactor * scale * rho.powf(self.alpha) / self.alpha * estimate, change))
    }

    /// `Cov(G(t), G(s))`, symmetric in its arguments; zero if either time is 0.
    pub fn covariance(&self, t: f64, s: f64) -> Result<f64> {
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        if lo < 0.0 {
            return Err(FgleError::InvalidParameter(format!("negative time {lo}")));
        }
        if lo == 0.0 {
            return Ok(0.0);
        }
        Ok(self.covariance_with_error(hi, lo)?.0)
    }

    /// Covariance matrix of `(G(t_1), ..., G(t_N))`.
    pub fn matrix(&self, grid: &GridSpec) -> Result<DMatrix<f64>> {
        let n = grid.n_steps();
        let h = grid.step();
        // Self-similarity: Cov(G(m h), G(n h)) = h^{2 gamma} Cov(G(m), G(n)).
        let scale = if self.brownian {
            h.powf(2.0 * self.alpha - 1.0)
        } else {
            h.powf(self.scaling_exponent())
        };
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..=i)
                    .map(|j| self.covariance((i + 1) as f64, (j + 1) as f64).map(|c| c * scale))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }
}

fn map_node(n: &Node, alpha: f64) -> (f64, f64) {
    let ln_y = if n.y > 0.5 { (-n.y_bar).ln_1p() } else { n.y.ln() };
    let ya = (ln_y / alpha).exp();
    let ya_bar = -(ln_y / alpha).exp_m1();
    (ya, ya_bar)
}

/// `Cov(G(t), G(s))` for `0 < s <= t`.
pub fn g_covariance(t: f64, s: f64, alpha: f64, hurst: f64, sigma: f64) -> Result<f64> {
    if !(s > 0.0 && s <= t) {
        return Err(FgleError::InvalidParameter(format!("need 0 < s <= t, got s={s}, t={t}")));
    }
    GCovariance::new(alpha, hurst, sigma)?.covariance(t, s)
}

/// Symmetric covariance matrix of `G` at the grid nodes `t_1..t_N`.
pub fn build_g_covariance_matrix(grid: &GridSpec, alpha: f64, hurst: f64, sigma: f64) -> Result<DMatrix<f64>> {
    GCovariance::new(alpha, hurst, sigma)?.matrix(grid)
}
