//! Shared oracles for the integration tests.
//!
//! Everything here is independent of the library's analytic paths: the cdf
//! oracle is adaptive Simpson quadrature of the density, derivative oracles
//! are central finite differences of whichever scalar function they check,
//! and the copula-density oracle is the bivariate-normal pdf ratio.

#![allow(dead_code)]

use copula_pde_core::copula::{CopulaPoint, Prob};
use copula_pde_core::linalg::Mat;
use copula_pde_core::normal;
use copula_pde_core::pi::{DriverState, PortfolioSpec, RhoMatrix};

/// Adaptive Simpson integration.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Quadrature oracle for the standard normal cdf.
pub fn cdf_quadrature(x: f64) -> f64 {
    let phi = |t: f64| normal::INV_SQRT_2PI * (-0.5 * t * t).exp();
    if x >= 0.0 {
        0.5 + adaptive_simpson(&phi, 0.0, x, 1e-14)
    } else {
        0.5 - adaptive_simpson(&phi, x, 0.0, 1e-14)
    }
}

/// Bivariate standard normal density with correlation `rho`.
pub fn binormal_pdf(x: f64, y: f64, rho: f64) -> f64 {
    let s = 1.0 - rho * rho;
    let z = (x * x - 2.0 * rho * x * y + y * y) / s;
    (-0.5 * z).exp() / (2.0 * std::f64::consts::PI * s.sqrt())
}

/// Copula-density oracle: `phi2(x1, x2; rho) / (phi(x1) phi(x2))`.
pub fn copula_density_oracle(u: f64, v: f64, rho: f64) -> f64 {
    let x1 = normal::quantile(u);
    let x2 = normal::quantile(v);
    binormal_pdf(x1, x2, rho) / (normal::pdf(x1) * normal::pdf(x2))
}

/// Conditional-cdf oracle: quadrature of the conditional density
/// `X1 | X2 = x2 ~ N(rho x2, 1 - rho^2)` up to `x1`.
pub fn h_function_oracle(u: f64, v: f64, rho: f64) -> f64 {
    let x1 = normal::quantile(u);
    let x2 = normal::quantile(v);
    let s = 1.0 - rho * rho;
    let mean = rho * x2;
    let dens =
        move |t: f64| normal::INV_SQRT_2PI / s.sqrt() * (-0.5 * (t - mean) * (t - mean) / s).exp();
    adaptive_simpson(&dens, mean - 12.0 * s.sqrt(), x1, 1e-13)
}

pub fn pi_at(u: f64, v: f64, rho: f64) -> f64 {
    copula_pde_core::copula::pi_entry(&CopulaPoint::from_raw(u, v, rho).unwrap())
}

pub fn density_at(u: f64, v: f64, rho: f64) -> f64 {
    copula_pde_core::copula::copula_density(&CopulaPoint::from_raw(u, v, rho).unwrap())
}

/// Central first difference with spec step `1e-6 * max(1, |x|)`.
pub fn fd1(f: &dyn Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central first difference with a caller-chosen step.
pub fn fd1_h(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point second difference, step shrunk near a domain boundary so the
/// stencil stays inside `(lo, hi)` and the local higher derivatives (which
/// blow up there) stay resolved.
pub fn fd2_bounded(f: &dyn Fn(f64) -> f64, x: f64, lo: f64, hi: f64) -> f64 {
    let dist = (x - lo).min(hi - x);
    let h = (dist * 0.02).min(1e-3);
    let five_point = |h: f64| {
        (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h))
            / (12.0 * h * h)
    };
    // One Richardson level keeps truncation resolved where higher
    // derivatives blow up near a boundary.
    (16.0 * five_point(h / 2.0) - five_point(h)) / 15.0
}

/// Four-point cross stencil for a mixed second derivative.
pub fn fd_cross(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, hx: f64, hy: f64) -> f64 {
    (f(x + hx, y + hy) - f(x + hx, y - hy) - f(x - hx, y + hy) + f(x - hx, y - hy))
        / (4.0 * hx * hy)
}

/// Mixed second derivative on the unit square: boundary-adaptive steps with
/// one Richardson extrapolation of the 4-point cross stencil.
pub fn fd_cross_unit(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64) -> f64 {
    let hx = (x.min(1.0 - x) * 0.02).min(1e-4);
    let hy = (y.min(1.0 - y) * 0.02).min(1e-4);
    let s1 = fd_cross(f, x, y, hx, hy);
    let s2 = fd_cross(f, x, y, hx / 2.0, hy / 2.0);
    (4.0 * s2 - s1) / 3.0
}

/// Relative error with the `max(1, |reference|)` floor the contracts use.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1.0)
}

/// Deterministic xorshift for test-point generation (independent of the
/// library's RNG).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// A random valid system with interior copula points.
pub struct RandomSystem {
    pub ps: PortfolioSpec,
    pub u: Vec<Prob>,
    pub d: DriverState,
    pub rho: RhoMatrix,
}

pub fn random_system(rng: &mut TestRng, n: usize, m: usize) -> RandomSystem {
    let weights: Vec<f64> = (0..n).map(|_| rng.range(0.1, 2.0)).collect();
    let u: Vec<Prob> = (0..n)
        .map(|_| Prob::new(normal::cdf(rng.range(-2.5, 2.5))).unwrap())
        .collect();
    let d = DriverState::from_raw(
        &(0..m)
            .map(|_| normal::cdf(rng.range(-2.5, 2.5)))
            .collect::<Vec<f64>>(),
    )
    .unwrap();
    let rho = RhoMatrix::new(Mat::from_fn(n, m, |_, _| rng.range(-0.9, 0.9))).unwrap();
    RandomSystem {
        ps: PortfolioSpec::new(weights).unwrap(),
        u,
        d,
        rho,
    }
}
