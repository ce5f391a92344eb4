//! Problem data: memory exponent, Hurst index, noise scale, initial value,
//! horizon and a bounded smooth drift.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{FgleError, Result};

/// Drift presets. All are smooth with bounded derivatives of every order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Constant { c: f64 },
    Cos,
    Sin,
    /// `lambda * sin(x)`.
    ScaledSin { lambda: f64 },
    /// `x`; unbounded, only for deterministic checks against classical schemes.
    Linear,
}

impl Drift {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { c } => c,
            Drift::Cos => x.cos(),
            Drift::Sin => x.sin(),
            Drift::ScaledSin { lambda } => lambda * x.sin(),
            Drift::Linear => x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero | Drift::Constant { .. } => 0.0,
            Drift::Cos => -x.sin(),
            Drift::Sin => x.cos(),
            Drift::ScaledSin { lambda } => lambda * x.cos(),
            Drift::Linear => 1.0,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero | Drift::Constant { .. } | Drift::Linear => 0.0,
            Drift::Cos => -x.cos(),
            Drift::Sin => -x.sin(),
            Drift::ScaledSin { lambda } => -lambda * x.sin(),
        }
    }

    /// `sup |f|`, infinite for unbounded drifts.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { c } => c.abs(),
            Drift::Cos | Drift::Sin => 1.0,
            Drift::ScaledSin { lambda } => lambda.abs(),
            Drift::Linear => f64::INFINITY,
        }
    }

    /// `true` when `f'` vanishes identically.
    pub fn is_flat(&self) -> bool {
        matches!(self, Drift::Zero | Drift::Constant { .. })
    }

    pub fn name(&self) -> String {
        match *self {
            Drift::Zero => "zero".into(),
            Drift::Constant { c } => format!("const({c})"),
            Drift::Cos => "cos".into(),
            Drift::Sin => "sin".into(),
            Drift::ScaledSin { lambda } => format!("scaled_sin({lambda})"),
            Drift::Linear => "linear".into(),
        }
    }

    /// Shipped presets with a one-line description each.
    pub fn presets() -> Vec<(&'static str, &'static str)> {
        vec![
            ("zero", "f(x) = 0"),
            ("constant", "f(x) = c, parameter c"),
            ("cos", "f(x) = cos x"),
            ("sin", "f(x) = sin x"),
            ("scaled_sin", "f(x) = lambda sin x, parameter lambda"),
        ]
    }
}

/// Parameters of `x(t) = x0 + (1/Gamma(a)) int (t-s)^(a-1) f(x(s)) ds + G(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub hurst: f64,
    pub sigma: f64,
    pub x0: f64,
    pub horizon: f64,
    pub drift: Drift,
}

impl ModelParams {
    /// Validated stochastic model; `sigma` must be nonzero.
    pub fn new(alpha: f64, hurst: f64, sigma: f64, x0: f64, horizon: f64, drift: Drift) -> Result<Self> {
        if sigma == 0.0 {
            return Err(FgleError::InvalidParameter("sigma must be nonzero; use `deterministic` for sigma = 0".into()));
        }
        let m = Self { alpha, hurst, sigma, x0, horizon, drift };
        m.validate()?;
        Ok(m)
    }

    /// Model with `sigma = 0`, so `G` vanishes.
    pub fn deterministic(alpha: f64, hurst: f64, x0: f64, horizon: f64, drift: Drift) -> Result<Self> {
        let m = Self { alpha, hurst, sigma: 0.0, x0, horizon, drift };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FgleError::InvalidParameter(msg));
        if !(0.5..1.0).contains(&self.hurst) {
            return bad(format!("Hurst index must lie in [1/2, 1), got {}", self.hurst));
        }
        if !(self.alpha <= 1.0 && self.alpha + self.hurst > 1.0) {
            return bad(format!("need 1 - H < alpha <= 1, got alpha={}, H={}", self.alpha, self.hurst));
        }
        if !self.sigma.is_finite() {
            return bad(format!("sigma must be finite, got {}", self.sigma));
        }
        if !self.x0.is_finite() {
            return bad(format!("x0 must be finite, got {}", self.x0));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        for &x in &[-1e6, -1.0, 0.0, 0.5, 1e6] {
            let d = &self.drift;
            if !(d.value(x).is_finite() && d.derivative(x).is_finite() && d.second_derivative(x).is_finite()) {
                return bad(format!("drift {} is not finite at {x}", d.name()));
            }
        }
        Ok(())
    }

    /// Exponent `alpha + H - 1` of the convergence rate.
    pub fn rate_exponent(&self) -> f64 {
        self.alpha + self.hurst - 1.0
    }

    pub fn gamma_alpha(&self) -> f64 {
        gamma(self.alpha)
    }
}
