//! Oracle-backed checks of the scalar copula layer: quadrature for the
//! normal cdf, bisection for the quantile, the bivariate-normal pdf ratio
//! for the density, conditional-density quadrature for the h-function, and
//! central finite differences for every analytic partial.

mod common;

use common::*;
use copula_pde_core::copula::{
    copula_density, h_function, partials, pi_entry, CopulaPoint, PiDeriv,
};
use copula_pde_core::normal;
use proptest::prelude::*;

fn pt(u: f64, v: f64, rho: f64) -> CopulaPoint {
    CopulaPoint::from_raw(u, v, rho).unwrap()
}

#[test]
fn cdf_matches_quadrature_oracle() {
    // |cdf - quadrature| small across |x| <= 8; the quadrature tolerance is
    // 1e-14 per call, so 5e-13 leaves headroom without hiding regressions.
    let mut x = -8.0;
    while x <= 8.0 {
        let o = cdf_quadrature(x);
        assert!(
            (normal::cdf(x) - o).abs() <= 5e-13,
            "cdf mismatch at {x}: {} vs oracle {}",
            normal::cdf(x),
            o
        );
        x += 0.25;
    }
    // Frozen oracle value: quadrature gives 0.975000000903558 at 1.959964.
    assert!((normal::cdf(1.959964) - 0.975).abs() <= 1e-6);
}

#[test]
fn quantile_matches_bisection_oracle() {
    // Independent bisection on the cdf.
    let bisect = |u: f64| {
        let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if normal::cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    for &u in &[0.01, 0.1, 0.3, 0.5, 0.8, 0.975, 0.999] {
        assert!(
            (normal::quantile(u) - bisect(u)).abs() <= 1e-10,
            "quantile vs bisection at {u}"
        );
    }
    // Frozen: bisection gives 1.9599639845400545 at u = 0.975.
    assert!((normal::quantile(0.975) - 1.959964).abs() <= 1e-6);
    assert!((normal::quantile(0.975) - 1.9599639845400545).abs() <= 1e-10);
}

#[test]
fn density_matches_binormal_ratio_oracle() {
    // Frozen: phi2/(phi phi) oracle gives 0.877081937646637 at (0.3, 0.7, 0.5).
    let c = copula_density(&pt(0.3, 0.7, 0.5));
    assert!((c - 0.877081937646637).abs() <= 1e-12);
    for &(u, v, r) in &[
        (0.1, 0.2, -0.7),
        (0.45, 0.8, 0.3),
        (0.9, 0.05, 0.85),
        (0.6, 0.6, -0.2),
    ] {
        let o = copula_density_oracle(u, v, r);
        assert!(
            rel_err(copula_density(&pt(u, v, r)), o) <= 1e-10,
            "density mismatch at ({u}, {v}, {r})"
        );
    }
}

#[test]
fn h_function_matches_conditional_quadrature_oracle() {
    // Frozen: conditional quadrature gives 0.181862952875311 at (0.3, 0.7, 0.5).
    let h = h_function(&pt(0.3, 0.7, 0.5));
    assert!((h - 0.181862952875311).abs() <= 1e-10);
    assert!((h - 0.182).abs() < 5e-4);
    for &(u, v, r) in &[(0.2, 0.4, 0.6), (0.8, 0.3, -0.5), (0.55, 0.9, 0.9)] {
        let o = h_function_oracle(u, v, r);
        assert!(
            (h_function(&pt(u, v, r)) - o).abs() <= 1e-9,
            "h mismatch at ({u}, {v}, {r})"
        );
    }
}

#[test]
fn h_function_is_a_cdf_in_u() {
    for &(v, r) in &[(0.3, 0.7), (0.8, -0.6), (0.5, 0.0), (0.15, 0.9)] {
        let mut prev = 0.0;
        for k in 0..=1000 {
            let u = (k as f64 / 1000.0).clamp(1e-9, 1.0 - 1e-9);
            let h = h_function(&pt(u, v, r));
            assert!(h + 1e-12 >= prev, "not monotone at u={u} v={v} r={r}");
            prev = h;
        }
        assert!(h_function(&pt(1e-9, v, r)) <= 1e-4);
        assert!(h_function(&pt(1.0 - 1e-9, v, r)) >= 1.0 - 1e-4);
    }
}

#[test]
fn pi_entry_matches_density_difference_oracle() {
    // Frozen: central difference of the density in v (h = 1e-6) gives
    // -1.32284149562123 at (0.3, 0.7, 0.5).
    let p = pi_entry(&pt(0.3, 0.7, 0.5));
    assert!((p - (-1.32284149562123)).abs() <= 1e-8);
    assert!((p - (-1.323)).abs() < 5e-4);
    let mut rng = TestRng::new(11);
    for _ in 0..50 {
        let u = normal::cdf(rng.range(-3.0, 3.0));
        let v = normal::cdf(rng.range(-3.0, 3.0));
        let r = rng.range(-0.9, 0.9);
        let f = |vv: f64| density_at(u, vv, r);
        let fd = fd1_h(&f, v, 1e-6);
        assert!(
            rel_err(pi_entry(&pt(u, v, r)), fd) <= 1e-5,
            "pi_entry vs density difference at ({u}, {v}, {r})"
        );
    }
}

fn check_all_partials(u: f64, v: f64, r: f64, tol: f64) {
    let p = pt(u, v, r);
    let pi_u = |uu: f64| pi_at(uu, v, r);
    let pi_v = |vv: f64| pi_at(u, vv, r);
    let pi_r = |rr: f64| pi_at(u, v, rr);
    let pi_uv = |uu: f64, vv: f64| pi_at(uu, vv, r);

    let checks = [
        (PiDeriv::U, fd1(&pi_u, u)),
        (PiDeriv::V, fd1(&pi_v, v)),
        (PiDeriv::Rho, fd1(&pi_r, r)),
        (PiDeriv::UU, fd2_bounded(&pi_u, u, 0.0, 1.0)),
        (PiDeriv::VV, fd2_bounded(&pi_v, v, 0.0, 1.0)),
        (PiDeriv::RhoRho, fd2_bounded(&pi_r, r, -1.0, 1.0)),
        (PiDeriv::UV, fd_cross_unit(&pi_uv, u, v)),
    ];
    for (which, fd) in checks {
        let analytic = partials(&p, which);
        assert!(
            rel_err(analytic, fd) <= tol,
            "{which:?} at ({u}, {v}, {r}): analytic {analytic}, fd {fd}, rel {}",
            rel_err(analytic, fd)
        );
    }
}

#[test]
fn partials_match_finite_differences_on_grid() {
    // The fixed 7 x 7 x 5 grid.
    let us = [0.05, 0.15, 0.3, 0.5, 0.7, 0.85, 0.95];
    let rs = [-0.9, -0.45, 0.0, 0.45, 0.9];
    for &u in &us {
        for &v in &us {
            for &r in &rs {
                check_all_partials(u, v, r, 1e-5);
            }
        }
    }
}

#[test]
fn partials_match_finite_differences_randomized() {
    // 100 random interior points with |x1|, |x2| <= 3, |rho| <= 0.9.
    let mut rng = TestRng::new(20240817);
    for _ in 0..100 {
        let u = normal::cdf(rng.range(-3.0, 3.0));
        let v = normal::cdf(rng.range(-3.0, 3.0));
        let r = rng.range(-0.9, 0.9);
        check_all_partials(u, v, r, 1e-5);
    }
}

#[test]
fn rho_partial_at_zero_matches_difference() {
    // Finite at rho = 0 and equal to the central difference there.
    for &(u, v) in &[(0.5, 0.5), (0.3, 0.7), (0.8, 0.2)] {
        let f = |rr: f64| pi_at(u, v, rr);
        let fd = fd1_h(&f, 0.0, 1e-6);
        let analytic = partials(&pt(u, v, 0.0), PiDeriv::Rho);
        assert!(analytic.is_finite());
        assert!(rel_err(analytic, fd) <= 1e-6);
    }
}

#[test]
fn exchange_and_reflection_symmetries() {
    let triples = [
        (0.2, 0.6, 0.5),
        (0.35, 0.9, -0.8),
        (0.5, 0.05, 0.3),
        (0.77, 0.77, 0.0),
    ];
    for &(u, v, r) in &triples {
        let lhs = copula_density(&pt(u, v, r));
        assert!((lhs - copula_density(&pt(v, u, r))).abs() <= 1e-12 * lhs.max(1.0));
        let refl = copula_density(&pt(1.0 - u, v, -r));
        assert!((lhs - refl).abs() <= 1e-12 * lhs.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prop_density_exchange_symmetry(u in 0.02f64..0.98, v in 0.02f64..0.98, r in -0.95f64..0.95) {
        let a = copula_density(&pt(u, v, r));
        let b = copula_density(&pt(v, u, r));
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn prop_density_reflection(u in 0.02f64..0.98, v in 0.02f64..0.98, r in -0.95f64..0.95) {
        let a = copula_density(&pt(u, v, r));
        let b = copula_density(&pt(1.0 - u, v, -r));
        prop_assert!((a - b).abs() <= 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn prop_independence_collapses(u in 0.02f64..0.98, v in 0.02f64..0.98) {
        prop_assert!((copula_density(&pt(u, v, 0.0)) - 1.0).abs() <= 1e-12);
        prop_assert!((h_function(&pt(u, v, 0.0)) - u).abs() <= 1e-12);
        prop_assert_eq!(pi_entry(&pt(u, v, 0.0)), 0.0);
    }

    #[test]
    fn prop_h_monotone_in_u(u1 in 0.02f64..0.5, gap in 0.01f64..0.45, v in 0.05f64..0.95, r in -0.9f64..0.9) {
        let u2 = u1 + gap;
        prop_assert!(h_function(&pt(u2, v, r)) >= h_function(&pt(u1, v, r)));
    }
}
