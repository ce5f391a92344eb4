//! Nested tanh-sinh (double exponential) quadrature on `[0, 1]`.
//!
//! Handles algebraic endpoint singularities with near-exponential
//! convergence. Each level halves the step, so level `L + 1` reuses every
//! node of level `L` and a refinement costs only the new half.

use std::f64::consts::FRAC_PI_2;

/// Abscissa `y`, its complement `1 - y` and the weight.
#[derive(Debug, Clone, Copy)]
pub struct Node {
    pub y: f64,
    pub y_bar: f64,
    pub weight: f64,
}

const T_MAX: f64 = 4.5;

/// Nodes grouped by the level at which they first appear.
#[derive(Debug, Clone)]
pub struct TanhSinh {
    levels: Vec<Vec<Node>>,
}

fn node(t: f64, step: f64) -> Node {
    let u = FRAC_PI_2 * t.sinh();
    let y = 1.0 / (1.0 + (-2.0 * u).exp());
    let y_bar = 1.0 / (1.0 + (2.0 * u).exp());
    let ch = u.cosh();
    let weight = step * 0.5 * FRAC_PI_2 * t.cosh() / (ch * ch);
    Node { y, y_bar, weight }
}

impl TanhSinh {
    /// Rule with levels `0..=max_level`; level `L` has step `2^-L`.
    pub fn new(max_level: usize) -> Self {
        let mut levels = Vec::with_capacity(max_level + 1);
        let k_max = T_MAX as i64;
        levels.push((-k_max..=k_max).map(|k| node(k as f64, 1.0)).collect());
        for level in 1..=max_level {
            let step = 0.5_f64.powi(level as i32);
            let half = (T_MAX / step) as i64;
            // only odd multiples of the new step are new
            let fresh = (-half..=half).filter(|k| k % 2 != 0).map(|k| node(k as f64 * step, step)).collect();
            levels.push(fresh);
        }
        Self { levels }
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Nodes first introduced at `level`.
    pub fn level_nodes(&self, level: usize) -> &[Node] {
        &self.levels[level]
    }

    /// Raw sum over the new nodes of `level` (weights carry that level's step).
    pub fn level_sum<F: FnMut(&Node) -> f64>(&self, level: usize, mut f: F) -> f64 {
        self.levels[level].iter().map(|n| n.weight * f(n)).sum()
    }

    /// Integrate, refining from `start_level` until two consecutive levels
    /// agree to `rel_tol`. Returns the estimate and the last relative change.
    pub fn integrate<F: FnMut(&Node) -> f64>(&self, start_level: usize, rel_tol: f64, mut f: F) -> (f64, f64) {
        // Level-L estimate: sum_{l <= L} level_sum(l) * 2^{l - L}
        let mut estimate = self.level_sum(0, &mut f);
        for level in 1..=start_level.min(self.max_level()) {
            estimate = 0.5 * estimate + self.level_sum(level, &mut f);
        }
        let mut change = f64::INFINITY;
        for level in start_level + 1..=self.max_level() {
            let next = 0.5 * estimate + self.level_sum(level, &mut f);
            change = (next - estimate).abs() / next.abs().max(f64::MIN_POSITIVE);
            estimate = next;
            if change <= rel_tol {
                break;
            }
        }
        (estimate, change)
    }
}
