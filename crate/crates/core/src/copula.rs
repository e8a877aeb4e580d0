//! Bivariate Gaussian-copula calculus for one (constituent, driver) pair.
//!
//! With `x1 = Phi^{-1}(u)`, `x2 = Phi^{-1}(v)` and `s = 1 - rho^2`, the
//! copula density is
//!
//! ```text
//! c(u, v, rho) = s^{-1/2} exp(-(rho^2 (x1^2 + x2^2) - 2 rho x1 x2) / (2 s))
//! ```
//!
//! [`pi_entry`] is the signed partial `dc/dv`, the quantity the driver-
//! partial matrix is assembled from, and [`partials`] provides its analytic
//! derivatives up to second order in each of `u`, `v`, `rho` (the second
//! `u`-derivative doubles as the third-order density term used by the
//! Kronecker contraction). Every derivative here is backed by a central
//! finite-difference oracle in the test suite.

use crate::error::CoreError;
#[allow(unused_imports)]
use crate::fmath::FloatExt;
use crate::normal;
use crate::{EPS_RHO, EPS_U};

/// A probability in the closed unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prob(f64);

impl Prob {
    pub fn new(value: f64) -> Result<Self, CoreError> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite {
                what: "probability".into(),
            });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(CoreError::ProbOutOfRange { value });
        }
        Ok(Prob(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Value pulled into `[EPS_U, 1 - EPS_U]` plus whether clamping moved it.
    #[inline]
    pub fn interior(self) -> (f64, bool) {
        if self.0 < EPS_U {
            (EPS_U, true)
        } else if self.0 > 1.0 - EPS_U {
            (1.0 - EPS_U, true)
        } else {
            (self.0, false)
        }
    }
}

/// A correlation; raw inputs outside `[-1, 1]` are rejected, values at the
/// endpoints are clamped to `+-(1 - EPS_RHO)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr(f64);

impl Corr {
    pub fn new(value: f64) -> Result<Self, CoreError> {
        if !value.is_finite() {
            return Err(CoreError::NonFinite {
                what: "correlation".into(),
            });
        }
        if value.abs() > 1.0 {
            return Err(CoreError::CorrOutOfRange { value });
        }
        let bound = 1.0 - EPS_RHO;
        Ok(Corr(value.clamp(-bound, bound)))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the stored value sits at the clamp boundary, where the
    /// copula expressions are close to singular.
    #[inline]
    pub fn near_singular(self) -> bool {
        self.0.abs() >= 1.0 - 2.0 * EPS_RHO
    }
}

/// One (constituent, driver) copula evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct CopulaPoint {
    pub u: Prob,
    pub v: Prob,
    pub rho: Corr,
    /// `Phi^{-1}(u)` after interior clamping.
    pub x1: f64,
    /// `Phi^{-1}(v)` after interior clamping.
    pub x2: f64,
    /// True when either uniform had to be pulled off the boundary.
    pub clamped: bool,
}

impl CopulaPoint {
    pub fn new(u: Prob, v: Prob, rho: Corr) -> Self {
        let (ui, cu) = u.interior();
        let (vi, cv) = v.interior();
        CopulaPoint {
            u,
            v,
            rho,
            x1: normal::quantile(ui),
            x2: normal::quantile(vi),
            clamped: cu || cv,
        }
    }

    /// Convenience constructor from raw floats.
    pub fn from_raw(u: f64, v: f64, rho: f64) -> Result<Self, CoreError> {
        Ok(CopulaPoint::new(
            Prob::new(u)?,
            Prob::new(v)?,
            Corr::new(rho)?,
        ))
    }
}

/// Derivative selector for [`partials`], applied to [`pi_entry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiDeriv {
    /// d/du
    U,
    /// d/dv
    V,
    /// d/drho
    Rho,
    /// d^2/du^2 -- equals the third-order density term d^3 c / du^2 dv.
    UU,
    /// d^2/dv^2
    VV,
    /// d^2/drho^2
    RhoRho,
    /// d^2/du dv
    UV,
}

/// Gaussian copula density, Eq-form `s^{-1/2} exp(E)`.
pub fn copula_density(p: &CopulaPoint) -> f64 {
    let r = p.rho.value();
    let s = 1.0 - r * r;
    let e = -(r * r * (p.x1 * p.x1 + p.x2 * p.x2) - 2.0 * r * p.x1 * p.x2) / (2.0 * s);
    e.exp() / s.sqrt()
}

/// Conditional cdf of `u` given `v` (the standard h-function):
/// `Phi((x1 - rho x2) / sqrt(1 - rho^2))`.
pub fn h_function(p: &CopulaPoint) -> f64 {
    let r = p.rho.value();
    normal::cdf((p.x1 - r * p.x2) / (1.0 - r * r).sqrt())
}

/// Signed driver-partial of the density:
/// `dc/dv = -c * rho (rho x2 - x1) / ((1 - rho^2) phi(x2))`.
///
/// This is the literal derivative of [`copula_density`]; it can be negative
/// or exceed one, and it is the single sign source for the conditional
/// probability `P(p|D) = -w' Pi D` downstream.
pub fn pi_entry(p: &CopulaPoint) -> f64 {
    let r = p.rho.value();
    let s = 1.0 - r * r;
    -copula_density(p) * r * (r * p.x2 - p.x1) / (s * normal::pdf(p.x2))
}

/// All partials of [`pi_entry`] needed by the driver-partial system,
/// computed in one pass so shared subexpressions are evaluated once.
#[derive(Debug, Clone, Copy, Default)]
pub struct PiEntryDerivs {
    pub pi: f64,
    pub du: f64,
    pub dv: f64,
    pub drho: f64,
    pub duu: f64,
    pub dvv: f64,
    pub duv: f64,
    pub drhorho: f64,
}

/// Evaluate [`pi_entry`] and its derivative set at one point.
///
/// Derivatives of the density `g` in `(x1, x2, rho)` space are polynomials
/// in `x1, x2` over powers of `s = 1 - rho^2` times `g`; the chain rule
/// through the quantile transforms contributes `dx/du = 1 / phi(x)` factors
/// and their derivatives.
pub fn pi_entry_derivs(p: &CopulaPoint) -> PiEntryDerivs {
    let r = p.rho.value();
    let x1 = p.x1;
    let x2 = p.x2;
    let s = 1.0 - r * r;
    let s2 = s * s;
    let s3 = s2 * s;
    let q = x1 * x1 + x2 * x2;
    let m = x1 * x2;

    let g = {
        let e = -(r * r * q - 2.0 * r * m) / (2.0 * s);
        e.exp() / s.sqrt()
    };

    // First x-derivative factors of the exponent.
    let a = r * (x2 - r * x1) / s;
    let b = r * (x1 - r * x2) / s;
    let r2s = r * r / s; // -dA/dx1 = -dB/dx2
    let rs = r / s; // dA/dx2 = dB/dx1

    // Density derivatives g_{...} in x-space.
    let g2 = g * b;
    let g12 = g * (a * b + rs);
    let g22 = g * (b * b - r2s);
    let g112 = g * (b * (a * a - r2s) + 2.0 * a * rs);
    let g122 = g * (a * (b * b - r2s) + 2.0 * b * rs);
    let g222 = g * (b * b * b - 3.0 * b * r2s);

    // rho-derivative factors.
    let e_r = (m * (1.0 + r * r) - r * q) / s2;
    let rr = r / s + e_r; // g_rho = g * rr
    let b_r = (x1 * (1.0 + r * r) - 2.0 * r * x2) / s2;
    let e_rr = (2.0 * r * m * (3.0 + r * r) - q * (1.0 + 3.0 * r * r)) / s3;
    let rr_r = (1.0 + r * r) / s2 + e_rr;
    let b_rr = (2.0 * r * x1 * (3.0 + r * r) - 2.0 * x2 * (1.0 + 3.0 * r * r)) / s3;
    let g2r = g * (rr * b + b_r);
    let g2rr = g * (rr * rr * b + 2.0 * rr * b_r + rr_r * b + b_rr);

    let phi1 = normal::pdf(x1);
    let phi2 = normal::pdf(x2);

    // pi = g2 / phi2 and its x-space derivatives.
    let pi = g2 / phi2;
    let pi_x1 = g12 / phi2;
    let pi_x1x1 = g112 / phi2;
    // d/dx2 picks up the 1/phi2 factor: d(1/phi2)/dx2 = x2/phi2.
    let pi_x2 = (g22 + x2 * g2) / phi2;
    let pi_x2x2 = (g222 + 2.0 * x2 * g22 + (1.0 + x2 * x2) * g2) / phi2;
    let pi_x1x2 = (g122 + x2 * g12) / phi2;

    PiEntryDerivs {
        pi,
        du: pi_x1 / phi1,
        dv: pi_x2 / phi2,
        drho: g2r / phi2,
        // d^2/du^2 = (pi_x1x1 + x1 pi_x1) / phi1^2 via d(1/phi1)/dx1 = x1/phi1.
        duu: (pi_x1x1 + x1 * pi_x1) / (phi1 * phi1),
        dvv: (pi_x2x2 + x2 * pi_x2) / (phi2 * phi2),
        duv: pi_x1x2 / (phi1 * phi2),
        drhorho: g2rr / phi2,
    }
}

/// Single-selector access to the [`pi_entry_derivs`] set.
pub fn partials(p: &CopulaPoint, which: PiDeriv) -> f64 {
    let d = pi_entry_derivs(p);
    match which {
        PiDeriv::U => d.du,
        PiDeriv::V => d.dv,
        PiDeriv::Rho => d.drho,
        PiDeriv::UU => d.duu,
        PiDeriv::VV => d.dvv,
        PiDeriv::RhoRho => d.drhorho,
        PiDeriv::UV => d.duv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(u: f64, v: f64, rho: f64) -> CopulaPoint {
        CopulaPoint::from_raw(u, v, rho).unwrap()
    }

    #[test]
    fn prob_and_corr_validation() {
        assert!(Prob::new(-0.1).is_err());
        assert!(Prob::new(1.1).is_err());
        assert!(Prob::new(f64::NAN).is_err());
        assert!(Corr::new(1.5).is_err());
        assert!(Corr::new(f64::INFINITY).is_err());
        // Endpoints clamp rather than fail.
        assert_eq!(Corr::new(1.0).unwrap().value(), 1.0 - crate::EPS_RHO);
        assert!(Corr::new(1.0).unwrap().near_singular());
        assert!(!Corr::new(0.5).unwrap().near_singular());
        let (u, flag) = Prob::new(0.0).unwrap().interior();
        assert_eq!(u, crate::EPS_U);
        assert!(flag);
    }

    #[test]
    fn copula_point_round_trip() {
        // |Phi(x1) - u| <= 1e-12 away from the clamp.
        for &u in &[0.001, 0.1, 0.3, 0.5, 0.77, 0.999] {
            let p = pt(u, 0.5, 0.0);
            assert!((normal::cdf(p.x1) - u).abs() <= 1e-12);
            assert!(!p.clamped);
        }
        assert!(pt(0.0, 0.5, 0.0).clamped);
        assert!(pt(0.5, 1.0, 0.0).clamped);
    }

    #[test]
    fn density_independence_and_known_values() {
        assert!((copula_density(&pt(0.5, 0.5, 0.0)) - 1.0).abs() <= 1e-15);
        // x1 = x2 = 0 forces the exponential to one: c = 1/sqrt(0.75).
        let c = copula_density(&pt(0.5, 0.5, 0.5));
        assert!((c - 1.0 / 0.75_f64.sqrt()).abs() <= 1e-12);
        assert!((c - 1.154701).abs() < 1e-6);
    }

    #[test]
    fn density_positive_on_grid() {
        for &u in &[0.05, 0.3, 0.7, 0.95] {
            for &v in &[0.05, 0.5, 0.9] {
                for &r in &[-0.9, -0.3, 0.0, 0.6, 0.9] {
                    assert!(copula_density(&pt(u, v, r)) > 0.0);
                }
            }
        }
    }

    #[test]
    fn h_function_independence_and_center() {
        for &u in &[0.1, 0.42, 0.9] {
            for &v in &[0.2, 0.8] {
                assert!((h_function(&pt(u, v, 0.0)) - u).abs() <= 1e-12);
            }
        }
        for &r in &[-0.8, -0.2, 0.3, 0.9] {
            assert!((h_function(&pt(0.5, 0.5, r)) - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn h_function_monotone_in_u() {
        let mut prev = -1.0;
        for k in 1..100 {
            let u = k as f64 / 100.0;
            let h = h_function(&pt(u, 0.35, 0.6));
            assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn pi_entry_zeros() {
        for &(u, v) in &[(0.2, 0.8), (0.5, 0.5), (0.9, 0.1)] {
            assert_eq!(pi_entry(&pt(u, v, 0.0)), 0.0);
        }
        assert!(pi_entry(&pt(0.5, 0.5, 0.5)).abs() <= 1e-15);
    }

    #[test]
    fn partials_match_one_shot_entry() {
        let p = pt(0.3, 0.7, 0.5);
        let d = pi_entry_derivs(&p);
        assert_eq!(d.pi, pi_entry(&p));
        assert_eq!(partials(&p, PiDeriv::U), d.du);
        assert_eq!(partials(&p, PiDeriv::RhoRho), d.drhorho);
    }

    #[test]
    fn second_u_partial_zero_at_rho_zero() {
        for &(u, v) in &[(0.2, 0.8), (0.45, 0.3), (0.9, 0.6)] {
            assert_eq!(partials(&pt(u, v, 0.0), PiDeriv::UU), 0.0);
        }
    }
}
