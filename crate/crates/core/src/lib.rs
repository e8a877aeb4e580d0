//! Numerical core for common-driver portfolio analytics.
//!
//! The crate implements the Gaussian-copula conditional-probability calculus
//! for a portfolio and a set of common drivers:
//!
//! - [`normal`]: standard normal pdf/cdf and a high-precision quantile,
//! - [`copula`]: the bivariate Gaussian copula density, the conditional
//!   h-function, the driver-partial `pi_entry`, and its analytic partials,
//! - [`pi`]: assembly of the driver-partial matrix, the conditional
//!   probability `P(p|D) = -w' Pi D`, its first/second partials, and the
//!   block-sparse Kronecker contraction of the third-order terms,
//! - [`residuals`]: drift (Delta) and no-Brownian residuals of the
//!   conditional risk-neutral PDE, a pathwise Ito consistency check, and the
//!   implied-weight / implied-variance least-squares solve,
//! - [`sim`]: Euler-Maruyama simulation of the portfolio, driver, and
//!   correlation processes plus closed-form GBM covariances and a synthetic
//!   market generator,
//! - [`linalg`]: the small dense matrix kit the above are built on.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the `std` feature
//! only adds `std::error::Error` for [`CoreError`].

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod copula;
mod error;
mod fmath;
pub mod linalg;
pub mod normal;
pub mod pi;
pub mod residuals;
pub mod sim;

pub use copula::{CopulaPoint, Corr, PiDeriv, Prob};
pub use error::CoreError;
pub use linalg::Mat;
pub use pi::{DriverState, PiSystem, PortfolioSpec, RhoMatrix};
pub use residuals::{ResidualReport, VolParams};
pub use sim::{ItoParams, PathSet};

/// Uniform arguments of the quantile transform are kept inside
/// `[EPS_U, 1 - EPS_U]`.
pub const EPS_U: f64 = 1e-9;

/// Correlations are kept inside `[-(1 - EPS_RHO), 1 - EPS_RHO]`; the copula
/// expressions are singular at `|rho| = 1`.
pub const EPS_RHO: f64 = 1e-6;
