//! Driver-partial matrix assembly and the conditional probability
//! `P(p|D) = -w' Pi D` with its partials.
//!
//! `Pi[i][j]` depends only on the triple `(u_i, d_j, rho_ij)`, so every
//! cross-index derivative vanishes and all derivative tensors collapse to
//! `n x m` slices. The slices are filled from [`crate::copula::pi_entry_derivs`]
//! in a single pass per pair.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::copula::{pi_entry_derivs, CopulaPoint, Corr, Prob};
use crate::error::{CoreError, Result};
#[allow(unused_imports)]
use crate::fmath::FloatExt;
use crate::linalg::Mat;
use crate::normal;

/// Portfolio weights; `n` is the weight count.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    weights: Vec<f64>,
}

impl PortfolioSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(CoreError::Contract {
                what: "portfolio needs at least one constituent".into(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::NonFinite {
                what: "portfolio weight".into(),
            });
        }
        Ok(PortfolioSpec { weights })
    }

    /// Equal weights summing to one.
    pub fn equal(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::Contract {
                what: "portfolio needs at least one constituent".into(),
            });
        }
        Ok(PortfolioSpec {
            weights: vec![1.0 / n as f64; n],
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// PIT-transformed driver values at lag one.
#[derive(Debug, Clone)]
pub struct DriverState {
    d: Vec<Prob>,
}

impl DriverState {
    pub fn new(d: Vec<Prob>) -> Result<Self> {
        if d.is_empty() {
            return Err(CoreError::Contract {
                what: "driver state needs at least one driver".into(),
            });
        }
        Ok(DriverState { d })
    }

    pub fn from_raw(values: &[f64]) -> Result<Self> {
        DriverState::new(
            values
                .iter()
                .map(|&v| Prob::new(v))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.d.len()
    }

    #[inline]
    pub fn probs(&self) -> &[Prob] {
        &self.d
    }

    /// Raw multiplier values used in the Jeffrey mixture.
    pub fn values(&self) -> Vec<f64> {
        self.d.iter().map(|p| p.value()).collect()
    }

    /// Optional normalization of the Jeffrey multipliers to sum one;
    /// off by default everywhere in the crate.
    pub fn normalized(&self) -> Result<DriverState> {
        let total: f64 = self.d.iter().map(|p| p.value()).sum();
        if total <= 0.0 {
            return Err(CoreError::Degenerate {
                what: "driver values sum to zero; cannot normalize".into(),
            });
        }
        DriverState::new(
            self.d
                .iter()
                .map(|p| Prob::new(p.value() / total))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

/// Constituent-driver correlation matrix (`n x m`), entries clamped per
/// [`Corr`].
#[derive(Debug, Clone)]
pub struct RhoMatrix {
    rho: Mat,
}

impl RhoMatrix {
    pub fn new(rho: Mat) -> Result<Self> {
        for i in 0..rho.rows() {
            for j in 0..rho.cols() {
                Corr::new(rho.get(i, j))?;
            }
        }
        let clamped = Mat::from_fn(rho.rows(), rho.cols(), |i, j| {
            Corr::new(rho.get(i, j)).expect("validated above").value()
        });
        Ok(RhoMatrix { rho: clamped })
    }

    pub fn constant(n: usize, m: usize, value: f64) -> Result<Self> {
        RhoMatrix::new(Mat::from_fn(n, m, |_, _| value))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.rho.rows()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.rho.cols()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho.get(i, j)
    }

    pub fn mat(&self) -> &Mat {
        &self.rho
    }
}

/// The assembled driver-partial matrix and its derivative slices.
#[derive(Debug, Clone)]
pub struct PiSystem {
    pub n: usize,
    pub m: usize,
    /// Constituent PIT values used to build the system.
    pub u: Vec<f64>,
    /// `pi_entry` per pair.
    pub pi: Mat,
    pub d_u: Mat,
    pub d_v: Mat,
    pub d_rho: Mat,
    pub d_uu: Mat,
    pub d_vv: Mat,
    pub d_uv: Mat,
    pub d_rhorho: Mat,
    /// True when any pair sat at a uniform clamp or near the correlation
    /// singularity.
    pub clamped: bool,
}

impl PiSystem {
    /// Populate all slices from per-pair copula points.
    pub fn build(u: &[Prob], d: &DriverState, rho: &RhoMatrix) -> Result<PiSystem> {
        let n = u.len();
        let m = d.m();
        if n == 0 {
            return Err(CoreError::Contract {
                what: "empty constituent vector".into(),
            });
        }
        if rho.n() != n || rho.m() != m {
            return Err(CoreError::DimensionMismatch {
                what: format!("rho is {}x{}, expected {}x{}", rho.n(), rho.m(), n, m),
            });
        }
        let mut sys = PiSystem {
            n,
            m,
            u: u.iter().map(|p| p.value()).collect(),
            pi: Mat::zeros(n, m),
            d_u: Mat::zeros(n, m),
            d_v: Mat::zeros(n, m),
            d_rho: Mat::zeros(n, m),
            d_uu: Mat::zeros(n, m),
            d_vv: Mat::zeros(n, m),
            d_uv: Mat::zeros(n, m),
            d_rhorho: Mat::zeros(n, m),
            clamped: false,
        };
        for i in 0..n {
            for j in 0..m {
                let corr = Corr::new(rho.get(i, j))?;
                let point = CopulaPoint::new(u[i], d.probs()[j], corr);
                sys.clamped |= point.clamped || corr.near_singular();
                let dv = pi_entry_derivs(&point);
                for (slice, value) in [
                    (&mut sys.pi, dv.pi),
                    (&mut sys.d_u, dv.du),
                    (&mut sys.d_v, dv.dv),
                    (&mut sys.d_rho, dv.drho),
                    (&mut sys.d_uu, dv.duu),
                    (&mut sys.d_vv, dv.dvv),
                    (&mut sys.d_uv, dv.duv),
                    (&mut sys.d_rhorho, dv.drhorho),
                ] {
                    if !value.is_finite() {
                        return Err(CoreError::NonFinite {
                            what: format!("pi-system slice at pair ({i}, {j})"),
                        });
                    }
                    slice.set(i, j, value);
                }
            }
        }
        Ok(sys)
    }

    fn check_dims(&self, ps: &PortfolioSpec, d: &DriverState) -> Result<()> {
        if ps.n() != self.n || d.m() != self.m {
            return Err(CoreError::DimensionMismatch {
                what: format!(
                    "system is {}x{}, got {} weights and {} drivers",
                    self.n,
                    self.m,
                    ps.n(),
                    d.m()
                ),
            });
        }
        Ok(())
    }
}

/// `P(p|D) = -sum_ij w_i Pi_ij d_j` (matrix-form contraction).
pub fn conditional_prob(ps: &PortfolioSpec, sys: &PiSystem, d: &DriverState) -> Result<f64> {
    sys.check_dims(ps, d)?;
    let dv = d.values();
    let mut acc = 0.0;
    for i in 0..sys.n {
        let mut row = 0.0;
        for j in 0..sys.m {
            row += sys.pi.get(i, j) * dv[j];
        }
        acc += ps.weights()[i] * row;
    }
    Ok(-acc)
}

/// The same probability through the explicit per-pair double sum, with the
/// scalar copula derivative expanded in closed form rather than read from
/// the assembled matrix. Used as the independent second route.
pub fn conditional_prob_double_sum(
    ps: &PortfolioSpec,
    u: &[Prob],
    d: &DriverState,
    rho: &RhoMatrix,
) -> Result<f64> {
    if ps.n() != u.len() || rho.n() != u.len() || rho.m() != d.m() {
        return Err(CoreError::DimensionMismatch {
            what: "double-sum inputs disagree".into(),
        });
    }
    let mut acc = 0.0;
    for (i, &w) in ps.weights().iter().enumerate() {
        for (j, dp) in d.probs().iter().enumerate() {
            let r = Corr::new(rho.get(i, j))?.value();
            let point = CopulaPoint::new(u[i], *dp, Corr::new(r)?);
            let s = 1.0 - r * r;
            let e = -(r * r * (point.x1 * point.x1 + point.x2 * point.x2)
                - 2.0 * r * point.x1 * point.x2)
                / (2.0 * s);
            // Expansion of -w Pi d per pair:
            // w d exp(E) (2 rho^2 x2 - 2 rho x1) / (2 s^{3/2} phi(x2)).
            let numer = 2.0 * r * r * point.x2 - 2.0 * r * point.x1;
            let term =
                w * dp.value() * e.exp() * numer / (2.0 * s * s.sqrt() * normal::pdf(point.x2));
            acc += term;
        }
    }
    Ok(acc)
}

/// First partials of the conditional probability.
///
/// All values are literal derivatives of [`conditional_prob`]; the portfolio
/// derivative treats every constituent argument as moving one-for-one with
/// the portfolio level, and drivers are exogenous to correlation moves
/// (`dD/drho = 0`).
#[derive(Debug, Clone)]
pub struct FirstPartials {
    /// `dP/dp = -sum_ij w_i (dPi/du)_ij d_j`.
    pub dp: f64,
    /// `dP/dD_j = -sum_i w_i ((dPi/dv)_ij d_j + Pi_ij)`.
    pub dd: Vec<f64>,
    /// `dP/drho_ij = -w_i (dPi/drho)_ij d_j`.
    pub drho: Mat,
}

pub fn first_partials(
    ps: &PortfolioSpec,
    sys: &PiSystem,
    d: &DriverState,
) -> Result<FirstPartials> {
    sys.check_dims(ps, d)?;
    let w = ps.weights();
    let dv = d.values();
    let mut dp = 0.0;
    let mut dd = vec![0.0; sys.m];
    let mut drho = Mat::zeros(sys.n, sys.m);
    for i in 0..sys.n {
        for j in 0..sys.m {
            dp -= w[i] * sys.d_u.get(i, j) * dv[j];
            dd[j] -= w[i] * (sys.d_v.get(i, j) * dv[j] + sys.pi.get(i, j));
            drho.set(i, j, -w[i] * sys.d_rho.get(i, j) * dv[j]);
        }
    }
    Ok(FirstPartials { dp, dd, drho })
}

/// Second partials of the conditional probability; the Hessian in the
/// drivers is diagonal so an `m`-vector carries it.
#[derive(Debug, Clone)]
pub struct SecondPartials {
    /// `d2P/dp2 = -sum_ij w_i (d2Pi/du2)_ij d_j`.
    pub dpp: f64,
    /// `d2P/dD_j2 = -sum_i w_i ((d2Pi/dv2)_ij d_j + 2 (dPi/dv)_ij)`.
    pub ddd: Vec<f64>,
    /// `d2P/dp dD_j = -sum_i w_i ((dPi/du)_ij + (d2Pi/du dv)_ij d_j)`.
    pub dpd: Vec<f64>,
    /// `d2P/drho_ij2 = -w_i (d2Pi/drho2)_ij d_j`.
    pub drhorho: Mat,
}

pub fn second_partials(
    ps: &PortfolioSpec,
    sys: &PiSystem,
    d: &DriverState,
) -> Result<SecondPartials> {
    sys.check_dims(ps, d)?;
    let w = ps.weights();
    let dv = d.values();
    let mut dpp = 0.0;
    let mut ddd = vec![0.0; sys.m];
    let mut dpd = vec![0.0; sys.m];
    let mut drhorho = Mat::zeros(sys.n, sys.m);
    for i in 0..sys.n {
        for j in 0..sys.m {
            dpp -= w[i] * sys.d_uu.get(i, j) * dv[j];
            ddd[j] -= w[i] * (sys.d_vv.get(i, j) * dv[j] + 2.0 * sys.d_v.get(i, j));
            dpd[j] -= w[i] * (sys.d_u.get(i, j) + sys.d_uv.get(i, j) * dv[j]);
            drhorho.set(i, j, -w[i] * sys.d_rhorho.get(i, j) * dv[j]);
        }
    }
    Ok(SecondPartials {
        dpp,
        ddd,
        dpd,
        drhorho,
    })
}

/// Block-sparse contraction of the third-order term
/// `D' (d2Pi/da2) Sigma_p w`: per driver `j`, only the
/// `d3 c(u_i, d_j) / dd_j du_i^2` entries are nonzero, so the full
/// `m x (m n^2)` block matrix collapses to
/// `y_j = d_j * sum_i (d2Pi/du2)_ij x_i`.
pub fn kron_assemble(sys: &PiSystem, d: &DriverState, sigma_p_w: &[f64]) -> Result<Vec<f64>> {
    if sigma_p_w.len() != sys.n || d.m() != sys.m {
        return Err(CoreError::DimensionMismatch {
            what: format!(
                "kron contraction: system {}x{}, sigma_p_w {}, drivers {}",
                sys.n,
                sys.m,
                sigma_p_w.len(),
                d.m()
            ),
        });
    }
    let dv = d.values();
    Ok((0..sys.m)
        .map(|j| {
            let s: f64 = (0..sys.n).map(|i| sys.d_uu.get(i, j) * sigma_p_w[i]).sum();
            dv[j] * s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(vals: &[f64]) -> Vec<Prob> {
        vals.iter().map(|&v| Prob::new(v).unwrap()).collect()
    }

    #[test]
    fn build_zero_rho_gives_zero_pi() {
        let u = probs(&[0.3]);
        let d = DriverState::from_raw(&[0.7]).unwrap();
        let rho = RhoMatrix::constant(1, 1, 0.0).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        assert_eq!(sys.pi.get(0, 0), 0.0);
        // Every slice with a leading rho factor vanishes too.
        assert_eq!(sys.d_u.get(0, 0), 0.0);
        assert_eq!(sys.d_v.get(0, 0), 0.0);
        assert_eq!(sys.d_uu.get(0, 0), 0.0);
        assert_eq!(sys.d_vv.get(0, 0), 0.0);
        assert_eq!(sys.d_uv.get(0, 0), 0.0);
        // d_rho is generally nonzero at rho = 0.
        assert!(sys.d_rho.get(0, 0).abs() > 0.0);
    }

    #[test]
    fn build_rejects_dimension_mismatch() {
        let u = probs(&[0.3, 0.4]);
        let d = DriverState::from_raw(&[0.7]).unwrap();
        let rho = RhoMatrix::constant(1, 1, 0.0).unwrap();
        assert!(matches!(
            PiSystem::build(&u, &d, &rho),
            Err(CoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conditional_prob_zero_at_independence() {
        let ps = PortfolioSpec::equal(2).unwrap();
        let u = probs(&[0.3, 0.6]);
        let d = DriverState::from_raw(&[0.7, 0.2]).unwrap();
        let rho = RhoMatrix::constant(2, 2, 0.0).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        assert_eq!(conditional_prob(&ps, &sys, &d).unwrap(), 0.0);
    }

    #[test]
    fn conditional_prob_linear_in_weights() {
        let u = probs(&[0.3, 0.6]);
        let d = DriverState::from_raw(&[0.7, 0.2]).unwrap();
        let rho = RhoMatrix::constant(2, 2, 0.4).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        let ps1 = PortfolioSpec::new(vec![0.5, 0.5]).unwrap();
        let ps2 = PortfolioSpec::new(vec![1.0, 1.0]).unwrap();
        let p1 = conditional_prob(&ps1, &sys, &d).unwrap();
        let p2 = conditional_prob(&ps2, &sys, &d).unwrap();
        assert!((p2 - 2.0 * p1).abs() <= 1e-15 * p2.abs().max(1.0));
    }

    #[test]
    fn kron_assemble_zero_rho_and_linearity() {
        let u = probs(&[0.3, 0.6]);
        let d = DriverState::from_raw(&[0.7, 0.2]).unwrap();
        let rho0 = RhoMatrix::constant(2, 2, 0.0).unwrap();
        let sys0 = PiSystem::build(&u, &d, &rho0).unwrap();
        assert_eq!(
            kron_assemble(&sys0, &d, &[0.2, 0.8]).unwrap(),
            vec![0.0, 0.0]
        );

        let rho = RhoMatrix::constant(2, 2, 0.5).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        let y1 = kron_assemble(&sys, &d, &[0.2, 0.8]).unwrap();
        let y2 = kron_assemble(&sys, &d, &[0.6, 2.4]).unwrap();
        for j in 0..2 {
            assert!((y2[j] - 3.0 * y1[j]).abs() <= 1e-12 * y2[j].abs().max(1.0));
        }
    }

    #[test]
    fn first_partials_zero_rho() {
        let ps = PortfolioSpec::equal(2).unwrap();
        let u = probs(&[0.3, 0.6]);
        let d = DriverState::from_raw(&[0.7, 0.2]).unwrap();
        let rho = RhoMatrix::constant(2, 2, 0.0).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        let fp = first_partials(&ps, &sys, &d).unwrap();
        assert_eq!(fp.dp, 0.0);
        assert_eq!(fp.dd, vec![0.0, 0.0]);
        let sp = second_partials(&ps, &sys, &d).unwrap();
        assert_eq!(sp.dpp, 0.0);
    }

    #[test]
    fn partials_scale_with_weights() {
        let u = probs(&[0.3, 0.6]);
        let d = DriverState::from_raw(&[0.7, 0.2]).unwrap();
        let rho = RhoMatrix::constant(2, 2, 0.5).unwrap();
        let sys = PiSystem::build(&u, &d, &rho).unwrap();
        let ps1 = PortfolioSpec::new(vec![0.3, 0.7]).unwrap();
        let ps3 = PortfolioSpec::new(vec![0.9, 2.1]).unwrap();
        let f1 = first_partials(&ps1, &sys, &d).unwrap();
        let f3 = first_partials(&ps3, &sys, &d).unwrap();
        assert!((f3.dp - 3.0 * f1.dp).abs() <= 1e-13 * f3.dp.abs().max(1.0));
        for j in 0..2 {
            assert!((f3.dd[j] - 3.0 * f1.dd[j]).abs() <= 1e-13 * f3.dd[j].abs().max(1.0));
        }
        let s1 = second_partials(&ps1, &sys, &d).unwrap();
        let s3 = second_partials(&ps3, &sys, &d).unwrap();
        assert!((s3.dpp - 3.0 * s1.dpp).abs() <= 1e-13 * s3.dpp.abs().max(1.0));
    }

    #[test]
    fn jeffrey_normalization_optional() {
        let d = DriverState::from_raw(&[0.6, 0.2]).unwrap();
        let norm = d.normalized().unwrap();
        let total: f64 = norm.values().iter().sum();
        assert!((total - 1.0).abs() <= 1e-15);
    }
}
