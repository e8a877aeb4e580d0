//! Residuals of the conditional risk-neutral PDE.
//!
//! The drift condition equates the second-order Ito drift of `P(p|D)` with
//! `mu_D P(p|D)`; its per-driver mismatch is the delta residual reported
//! here. The no-Brownian condition `(dPi/drho) D = 0` is reported as a
//! per-constituent residual. Both are reported, never asserted zero:
//! thresholding is the caller's business.
//!
//! [`drift_residual`] evaluates the condition through the assembled partials
//! of `P`; [`drift_residual_factored`] evaluates the weight-factored form
//! (the per-pair system that keeps the constituent index open) and must
//! agree with the first path after contraction with the weights. The
//! factored per-pair terms are also what the rolling pipeline reports as
//! per-pair deviations, and their `Sigma_p w` coefficient blocks are the
//! rows of the implied-solve system.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::linalg::{self, Mat};
use crate::pi::{
    conditional_prob, first_partials, kron_assemble, second_partials, DriverState, PiSystem,
    PortfolioSpec,
};
use crate::sim::PathSet;

/// Drift, volatility, and correlation-process parameters entering the PDE
/// terms. All rates are per the same time unit (annualized in the market
/// pipeline).
#[derive(Debug, Clone)]
pub struct VolParams {
    /// Portfolio volatility.
    pub sigma_p: f64,
    /// Diagonal of the constituent variance matrix (length `n`).
    pub sigma_p_diag: Vec<f64>,
    /// Driver covariance matrix (`m x m`, symmetric PSD).
    pub sigma_d: Mat,
    /// Driver drifts (length `m`).
    pub mu_d: Vec<f64>,
    /// Correlation-process GBM drifts (length `n * m`).
    pub mu_rho: Vec<f64>,
    /// Correlation-process GBM volatilities (length `n * m`).
    pub sigma_rho: Vec<f64>,
    sqrt_sigma_d: Mat,
}

impl VolParams {
    pub fn new(
        sigma_p: f64,
        sigma_p_diag: Vec<f64>,
        sigma_d: Mat,
        mu_d: Vec<f64>,
        mu_rho: Vec<f64>,
        sigma_rho: Vec<f64>,
    ) -> Result<Self> {
        if sigma_p < 0.0 || !sigma_p.is_finite() {
            return Err(CoreError::Contract {
                what: "sigma_p must be finite and nonnegative".into(),
            });
        }
        let m = mu_d.len();
        if sigma_d.rows() != m || sigma_d.cols() != m {
            return Err(CoreError::DimensionMismatch {
                what: format!(
                    "sigma_d is {}x{}, mu_d has {m}",
                    sigma_d.rows(),
                    sigma_d.cols()
                ),
            });
        }
        if !sigma_d.is_symmetric(1e-10) {
            return Err(CoreError::Contract {
                what: "sigma_d must be symmetric".into(),
            });
        }
        // Principal root; also proves positive semidefiniteness.
        let sqrt_sigma_d = linalg::sqrtm_psd(&sigma_d, "sigma_d")?;
        Ok(VolParams {
            sigma_p,
            sigma_p_diag,
            sigma_d,
            mu_d,
            mu_rho,
            sigma_rho,
            sqrt_sigma_d,
        })
    }

    /// All-zero parameters for `n` constituents and `m` drivers.
    pub fn zeros(n: usize, m: usize) -> Self {
        VolParams {
            sigma_p: 0.0,
            sigma_p_diag: vec![0.0; n],
            sigma_d: Mat::zeros(m, m),
            mu_d: vec![0.0; m],
            mu_rho: vec![0.0; n * m],
            sigma_rho: vec![0.0; n * m],
            sqrt_sigma_d: Mat::zeros(m, m),
        }
    }

    /// Principal square root of the driver covariance.
    pub fn sqrt_sigma_d(&self) -> &Mat {
        &self.sqrt_sigma_d
    }

    pub fn m(&self) -> usize {
        self.mu_d.len()
    }
}

/// How the scalar `d2P/dp2 sigma_p^2` term is attributed across the
/// per-driver residual entries; weights always sum to one, preserving the
/// scalar reading under summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Broadcast {
    /// `1/m` to every driver.
    #[default]
    Uniform,
    /// Proportional to `|d_j|`.
    DriverProportional,
}

fn broadcast_weights(mode: Broadcast, d: &DriverState) -> Vec<f64> {
    let vals = d.values();
    match mode {
        Broadcast::Uniform => vec![1.0 / vals.len() as f64; vals.len()],
        Broadcast::DriverProportional => {
            let total: f64 = vals.iter().map(|v| v.abs()).sum();
            if total <= 0.0 {
                vec![1.0 / vals.len() as f64; vals.len()]
            } else {
                vals.iter().map(|v| v.abs() / total).collect()
            }
        }
    }
}

/// Drift and no-Brownian residuals with their aggregates.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Per-driver drift residual.
    pub delta: Vec<f64>,
    /// L2 norm of `delta`.
    pub delta_aggregate: f64,
    /// Per-constituent no-Brownian residual.
    pub brownian: Vec<f64>,
    /// L2 norm of `brownian`.
    pub brownian_aggregate: f64,
    /// Per-pair contribution `w_i T_ij` with `delta_j = sum_i w_i T_ij`.
    pub per_pair: Mat,
}

/// Per-driver drift residual through the partials of `P`:
///
/// `delta_j = 1/2 (beta_j dpp sigma_p^2 + (ddd' Sigma_D)_j)
///            + sigma_p (sqrt(Sigma_D) dpd)_j - mu_D_j P`.
pub fn drift_residual(
    ps: &PortfolioSpec,
    sys: &PiSystem,
    d: &DriverState,
    vp: &VolParams,
    mode: Broadcast,
) -> Result<Vec<f64>> {
    if vp.m() != sys.m {
        return Err(CoreError::DimensionMismatch {
            what: format!("vol params have {} drivers, system {}", vp.m(), sys.m),
        });
    }
    let p = conditional_prob(ps, sys, d)?;
    let sp = second_partials(ps, sys, d)?;
    let beta = broadcast_weights(mode, d);
    let mixed = vp.sqrt_sigma_d().mul_vec(&sp.dpd)?;
    let mut delta = vec![0.0; sys.m];
    for j in 0..sys.m {
        let mut dd_sig = 0.0;
        for k in 0..sys.m {
            dd_sig += sp.ddd[k] * vp.sigma_d.get(k, j);
        }
        delta[j] = 0.5 * (beta[j] * sp.dpp * vp.sigma_p * vp.sigma_p + dd_sig)
            + vp.sigma_p * mixed[j]
            - vp.mu_d[j] * p;
    }
    Ok(delta)
}

/// Per-pair terms of the weight-factored drift condition. Entry `(i, j)` is
/// `T_ij`; the contraction `sum_i w_i T_ij` reproduces [`drift_residual`].
pub fn drift_terms_per_pair(
    sys: &PiSystem,
    d: &DriverState,
    vp: &VolParams,
    mode: Broadcast,
) -> Result<Mat> {
    if vp.m() != sys.m {
        return Err(CoreError::DimensionMismatch {
            what: format!("vol params have {} drivers, system {}", vp.m(), sys.m),
        });
    }
    let dv = d.values();
    let beta = broadcast_weights(mode, d);
    let n = sys.n;
    let m = sys.m;
    // Per-constituent pieces of each P-partial (no weight applied).
    let mut p_i = vec![0.0; n];
    let mut dpp_i = vec![0.0; n];
    let mut ddd_ik = Mat::zeros(n, m);
    let mut dpd_ik = Mat::zeros(n, m);
    for i in 0..n {
        for k in 0..m {
            p_i[i] -= sys.pi.get(i, k) * dv[k];
            dpp_i[i] -= sys.d_uu.get(i, k) * dv[k];
            ddd_ik.set(
                i,
                k,
                -(sys.d_vv.get(i, k) * dv[k] + 2.0 * sys.d_v.get(i, k)),
            );
            dpd_ik.set(i, k, -(sys.d_u.get(i, k) + sys.d_uv.get(i, k) * dv[k]));
        }
    }
    let root = vp.sqrt_sigma_d();
    let mut t = Mat::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut dd_sig = 0.0;
            let mut mixed = 0.0;
            for k in 0..m {
                dd_sig += ddd_ik.get(i, k) * vp.sigma_d.get(k, j);
                mixed += root.get(j, k) * dpd_ik.get(i, k);
            }
            let val = 0.5 * (beta[j] * dpp_i[i] * vp.sigma_p * vp.sigma_p + dd_sig)
                + vp.sigma_p * mixed
                - vp.mu_d[j] * p_i[i];
            t.set(i, j, val);
        }
    }
    Ok(t)
}

/// Weight-factored route to the drift residual: build the per-pair terms,
/// then contract with the weights.
pub fn drift_residual_factored(
    ps: &PortfolioSpec,
    sys: &PiSystem,
    d: &DriverState,
    vp: &VolParams,
    mode: Broadcast,
) -> Result<Vec<f64>> {
    let t = drift_terms_per_pair(sys, d, vp, mode)?;
    let w = ps.weights();
    if w.len() != sys.n {
        return Err(CoreError::DimensionMismatch {
            what: "weights vs system".into(),
        });
    }
    Ok((0..sys.m)
        .map(|j| (0..sys.n).map(|i| w[i] * t.get(i, j)).sum())
        .collect())
}

/// Full residual report: drift residual (through the factored path so the
/// per-pair attribution is available), no-Brownian residual, aggregates.
pub fn residual_report(
    ps: &PortfolioSpec,
    sys: &PiSystem,
    d: &DriverState,
    vp: &VolParams,
    mode: Broadcast,
) -> Result<ResidualReport> {
    let t = drift_terms_per_pair(sys, d, vp, mode)?;
    let w = ps.weights();
    let mut per_pair = Mat::zeros(sys.n, sys.m);
    for i in 0..sys.n {
        for j in 0..sys.m {
            per_pair.set(i, j, w[i] * t.get(i, j));
        }
    }
    let delta: Vec<f64> = (0..sys.m)
        .map(|j| (0..sys.n).map(|i| per_pair.get(i, j)).sum())
        .collect();
    let brownian = brownian_condition_residual(sys, d)?;
    Ok(ResidualReport {
        delta_aggregate: linalg::norm2(&delta),
        brownian_aggregate: linalg::norm2(&brownian),
        delta,
        brownian,
        per_pair,
    })
}

/// No-Brownian condition residual, one entry per constituent:
/// `r_i = sum_j (dPi/drho)_ij d_j`.
pub fn brownian_condition_residual(sys: &PiSystem, d: &DriverState) -> Result<Vec<f64>> {
    if d.m() != sys.m {
        return Err(CoreError::DimensionMismatch {
            what: "drivers vs system".into(),
        });
    }
    let dv = d.values();
    Ok((0..sys.n)
        .map(|i| (0..sys.m).map(|j| sys.d_rho.get(i, j) * dv[j]).sum())
        .collect())
}

/// Pathwise Ito-consistency error of the simulated trajectories.
///
/// For each step the observed increment of `P(p|D)` along the path is
/// compared with the Ito expansion prediction: first-order terms use the
/// realized state increments, second-order terms use their `dt`
/// expectations. Returns the mean absolute per-step mismatch, which shrinks
/// at first order in `dt`.
pub fn ito_consistency(ps: &PortfolioSpec, paths: &PathSet, vp: &VolParams) -> Result<f64> {
    let n = ps.n();
    let m = vp.m();
    let steps = paths.steps();
    if steps < 10 {
        return Err(CoreError::PathTooShort {
            steps,
            min_steps: 10,
        });
    }
    let dt = paths.dt();
    let mut total = 0.0;
    let mut count = 0usize;
    for path in paths.paths() {
        for t in 0..steps {
            let state0 = paths.state_at(path, t, n)?;
            let state1 = paths.state_at(path, t + 1, n)?;
            let sys = PiSystem::build(&state0.u, &state0.d, &state0.rho_mat()?)?;
            let p0 = conditional_prob(ps, &sys, &state0.d)?;
            let sys1 = PiSystem::build(&state1.u, &state1.d, &state1.rho_mat()?)?;
            let p1 = conditional_prob(ps, &sys1, &state1.d)?;
            let fp = first_partials(ps, &sys, &state0.d)?;
            let sp = second_partials(ps, &sys, &state0.d)?;

            let mut pred = fp.dp * (state1.p - state0.p);
            let d0 = state0.d.values();
            let d1 = state1.d.values();
            for j in 0..m {
                pred += fp.dd[j] * (d1[j] - d0[j]);
            }
            for i in 0..n {
                for j in 0..m {
                    pred += fp.drho.get(i, j)
                        * (state1.rho_flat[i * m + j] - state0.rho_flat[i * m + j]);
                }
            }
            // dt-order terms of the expansion.
            let mut quad = 0.5 * sp.dpp * vp.sigma_p * vp.sigma_p;
            for j in 0..m {
                quad += 0.5 * sp.ddd[j] * vp.sigma_d.get(j, j);
            }
            let mixed = vp.sqrt_sigma_d().mul_vec(&sp.dpd)?;
            for j in 0..m {
                quad += vp.sigma_p * mixed[j];
            }
            pred += quad * dt;

            total += (p1 - p0 - pred).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Stacked linear system `A x + b ~ 0` for the implied solve, `x = Sigma_p w`.
#[derive(Debug, Clone)]
pub struct ImpliedSystem {
    /// Coefficient rows (`m` per stacked snapshot, `n` columns).
    pub a: Mat,
    /// Constant terms.
    pub b: Vec<f64>,
}

impl ImpliedSystem {
    /// Stack several snapshots' systems into one.
    pub fn stack(systems: &[ImpliedSystem]) -> Result<ImpliedSystem> {
        let Some(first) = systems.first() else {
            return Err(CoreError::Contract {
                what: "nothing to stack".into(),
            });
        };
        let n = first.a.cols();
        let rows: usize = systems.iter().map(|s| s.a.rows()).sum();
        let mut a = Mat::zeros(rows, n);
        let mut b = Vec::with_capacity(rows);
        let mut r = 0;
        for s in systems {
            if s.a.cols() != n {
                return Err(CoreError::DimensionMismatch {
                    what: "stacked systems must share the unknown count".into(),
                });
            }
            for i in 0..s.a.rows() {
                for j in 0..n {
                    a.set(r, j, s.a.get(i, j));
                }
                b.push(s.b[i]);
                r += 1;
            }
        }
        Ok(ImpliedSystem { a, b })
    }

    /// Minimum-norm least-squares solve of `min ||A x + b||`.
    pub fn solve(&self) -> Result<ImpliedSolution> {
        let scale = self
            .a
            .data()
            .iter()
            .chain(self.b.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if scale == 0.0 {
            return Err(CoreError::Degenerate {
                what: "implied system is identically zero (all correlations zero?)".into(),
            });
        }
        let rhs: Vec<f64> = self.b.iter().map(|v| -v).collect();
        let sol = linalg::lstsq_min_norm(&self.a, &rhs, 1e-10)?;
        Ok(ImpliedSolution {
            sigma_p_w: sol.x,
            rank: sol.rank,
            rank_deficient: sol.rank_deficient,
            residual_norm: sol.residual_norm,
        })
    }
}

/// Result of the implied solve.
#[derive(Debug, Clone)]
pub struct ImpliedSolution {
    /// The recovered vector `x = Sigma_p w`.
    pub sigma_p_w: Vec<f64>,
    pub rank: usize,
    /// Flagged when the stacked system had fewer independent equations than
    /// unknowns; the minimum-norm solution is still returned.
    pub rank_deficient: bool,
    pub residual_norm: f64,
}

impl ImpliedSolution {
    /// Given constituent variances, the implied weights `w_i = x_i / var_i`.
    pub fn implied_weights(&self, variances: &[f64]) -> Result<Vec<f64>> {
        if variances.len() != self.sigma_p_w.len() {
            return Err(CoreError::DimensionMismatch {
                what: "variances vs solution".into(),
            });
        }
        variances
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Err(CoreError::ZeroWeight { index: i })
                } else {
                    Ok(self.sigma_p_w[i] / v)
                }
            })
            .collect()
    }

    /// Given weights, the implied conditional variances `var_i = x_i / w_i`.
    pub fn implied_variances(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.sigma_p_w.len() {
            return Err(CoreError::DimensionMismatch {
                what: "weights vs solution".into(),
            });
        }
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if w == 0.0 {
                    Err(CoreError::ZeroWeight { index: i })
                } else {
                    Ok(self.sigma_p_w[i] / w)
                }
            })
            .collect()
    }
}

/// Assemble one snapshot's `m` driver equations of the weight-factored PDE.
///
/// Row `j`: `sum_i [ 1/2 d_j (d2Pi/du2)_ij
///                   + sum_k sqrt(Sigma_D)_jk ((dPi/du)_ik + (d2Pi/dudv)_ik d_k) ] x_i
///          + 1/2 sum_i sum_k ((d2Pi/dv2)_ik d_k + 2 (dPi/dv)_ik) Sigma_D_kj
///          + mu_D_j d_j sum_i Pi_ij = 0`.
///
/// The first coefficient block is exactly [`kron_assemble`]'s contraction.
pub fn assemble_implied_system(
    sys: &PiSystem,
    d: &DriverState,
    vp: &VolParams,
) -> Result<ImpliedSystem> {
    if vp.m() != sys.m || d.m() != sys.m {
        return Err(CoreError::DimensionMismatch {
            what: "implied assembly inputs disagree".into(),
        });
    }
    let n = sys.n;
    let m = sys.m;
    let dv = d.values();
    let root = vp.sqrt_sigma_d();
    let mut a = Mat::zeros(m, n);
    let mut b = vec![0.0; m];
    // Coefficients of x: the kron term plus the mixed term (both linear in
    // Sigma_p w). Build per unit basis vector to reuse kron_assemble.
    for i in 0..n {
        let mut unit = vec![0.0; n];
        unit[i] = 1.0;
        let kron = kron_assemble(sys, d, &unit)?;
        for j in 0..m {
            let mut mixed = 0.0;
            for k in 0..m {
                mixed += root.get(j, k) * (sys.d_u.get(i, k) + sys.d_uv.get(i, k) * dv[k]);
            }
            a.set(j, i, 0.5 * kron[j] + mixed);
        }
    }
    for j in 0..m {
        let mut sig_term = 0.0;
        for i in 0..n {
            for k in 0..m {
                sig_term +=
                    (sys.d_vv.get(i, k) * dv[k] + 2.0 * sys.d_v.get(i, k)) * vp.sigma_d.get(k, j);
            }
        }
        let mut pi_col = 0.0;
        for i in 0..n {
            pi_col += sys.pi.get(i, j);
        }
        b[j] = 0.5 * sig_term + vp.mu_d[j] * dv[j] * pi_col;
    }
    Ok(ImpliedSystem { a, b })
}

/// One-snapshot convenience wrapper: assemble and solve.
pub fn implied_solve(sys: &PiSystem, d: &DriverState, vp: &VolParams) -> Result<ImpliedSolution> {
    assemble_implied_system(sys, d, vp)?.solve()
}

/// Reasons a per-pair value may be missing; used by callers that degrade
/// pairs instead of aborting.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIssue {
    pub i: usize,
    pub j: usize,
    pub reason: String,
}

/// Canonical two-constituent / two-driver configuration for the Ito
/// consistency convergence check, shared by the CLI surface and the test
/// suites so their numbers are comparable.
pub fn consistency_check_setup(
    dt: f64,
    steps: usize,
    seed: u64,
) -> (crate::sim::ItoParams, VolParams, PortfolioSpec) {
    let n = 2;
    let m = 2;
    let sigma_d = vec![0.08, 0.1];
    let corr = Mat::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).expect("static shape");
    let params = crate::sim::ItoParams {
        mu_p: 0.01,
        sigma_p: 0.08,
        p0: 0.5,
        mu_d: vec![0.02, -0.01],
        sigma_d: sigma_d.clone(),
        d0: vec![0.5, 0.45],
        corr_d: corr.clone(),
        driver_kind: crate::sim::ProcessKind::Arithmetic,
        mu_rho: vec![0.0; n * m],
        sigma_rho: vec![0.3; n * m],
        rho0: vec![0.3, -0.2, 0.4, 0.1],
        dt,
        steps,
        seed,
    };
    let sigma_d_mat = Mat::from_fn(m, m, |i, j| corr.get(i, j) * sigma_d[i] * sigma_d[j]);
    let vp = VolParams::new(
        params.sigma_p,
        vec![0.0; n],
        sigma_d_mat,
        params.mu_d.clone(),
        params.mu_rho.clone(),
        params.sigma_rho.clone(),
    )
    .expect("static parameters are valid");
    let ps = PortfolioSpec::equal(n).expect("n > 0");
    (params, vp, ps)
}
