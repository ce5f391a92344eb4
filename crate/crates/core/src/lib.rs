//! Simulation toolkit for the overdamped generalized Langevin equation with
//! fractional noise,
//!
//! ```text
//! x(t) = x0 + 1/Gamma(alpha) int_0^t (t-s)^(alpha-1) f(x(s)) ds
//!           + sigma/Gamma(alpha) int_0^t (t-s)^(alpha-1) dW_H(s),
//! ```
//!
//! and its Euler-Maruyama discretisation: exact fractional noise, exact
//! sampling of the singular stochastic convolution, discrete Malliavin
//! derivatives, density estimation and convergence-rate studies.

pub mod convolution_sampler;
pub mod density;
pub mod em_integrator;
pub mod experiments;
pub mod error;
pub mod fractional_noise;
pub mod hilbert_space;
pub mod malliavin;
pub mod model;
pub mod quadrature;
pub mod stream;
pub mod volterra_kernel;

pub use error::{FgleError, Result};
