//! Euler-Maruyama simulation of the coupled portfolio / driver /
//! correlation systems, closed-form GBM covariances, and the synthetic
//! market generator.
//!
//! Randomness comes from ChaCha12 with one substream per path (the stream id
//! is the path index), so a path's draws are a pure function of
//! `(seed, path)` regardless of evaluation order or worker count.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::copula::Prob;
use crate::error::{CoreError, Result};
#[allow(unused_imports)]
use crate::fmath::FloatExt;
use crate::linalg::{self, Mat};
use crate::pi::{DriverState, RhoMatrix};
use crate::{EPS_RHO, EPS_U};

/// Deterministic standard-normal sampler (Box-Muller over a ChaCha12
/// substream).
pub struct NormalSampler {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl NormalSampler {
    fn uniform(&mut self) -> f64 {
        // 53-bit uniform in (0, 1].
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Next standard normal draw.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Per-path RNG substream: draws depend only on `(seed, path)`.
pub fn path_rng(seed: u64, path: u64) -> NormalSampler {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path);
    NormalSampler { rng, spare: None }
}

/// How a simulated process multiplies its noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    /// `dX = mu dt + sigma dW`.
    Arithmetic,
    /// `dX = mu X dt + sigma X dW`.
    Geometric,
}

/// Parameters of the three coupled systems.
#[derive(Debug, Clone)]
pub struct ItoParams {
    pub mu_p: f64,
    pub sigma_p: f64,
    pub p0: f64,
    pub mu_d: Vec<f64>,
    pub sigma_d: Vec<f64>,
    pub d0: Vec<f64>,
    /// Driver Brownian correlation (`m x m`, symmetric PSD, unit diagonal).
    pub corr_d: Mat,
    pub driver_kind: ProcessKind,
    /// Correlation-process GBM parameters, flattened row-major over the
    /// `n x m` pairs.
    pub mu_rho: Vec<f64>,
    pub sigma_rho: Vec<f64>,
    pub rho0: Vec<f64>,
    /// Time step (years).
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
}

impl ItoParams {
    fn validate(&self) -> Result<Mat> {
        let m = self.mu_d.len();
        if self.sigma_d.len() != m || self.d0.len() != m {
            return Err(CoreError::DimensionMismatch {
                what: "driver parameter lengths disagree".into(),
            });
        }
        if self.corr_d.rows() != m || self.corr_d.cols() != m {
            return Err(CoreError::DimensionMismatch {
                what: "corr_d shape vs driver count".into(),
            });
        }
        if !self.corr_d.is_symmetric(1e-12) {
            return Err(CoreError::Contract {
                what: "corr_d must be symmetric".into(),
            });
        }
        for j in 0..m {
            if (self.corr_d.get(j, j) - 1.0).abs() > 1e-12 {
                return Err(CoreError::Contract {
                    what: format!("corr_d diagonal entry {j} is not one"),
                });
            }
        }
        let nm = self.rho0.len();
        if self.mu_rho.len() != nm || self.sigma_rho.len() != nm {
            return Err(CoreError::DimensionMismatch {
                what: "correlation parameter lengths disagree".into(),
            });
        }
        if nm % m != 0 {
            return Err(CoreError::DimensionMismatch {
                what: "rho0 length must be a multiple of the driver count".into(),
            });
        }
        if self.dt <= 0.0 || self.steps == 0 {
            return Err(CoreError::Contract {
                what: "dt must be positive and steps nonzero".into(),
            });
        }
        if self.sigma_p < 0.0
            || self.sigma_d.iter().any(|s| *s < 0.0)
            || self.sigma_rho.iter().any(|s| *s < 0.0)
        {
            return Err(CoreError::Contract {
                what: "volatilities must be nonnegative".into(),
            });
        }
        // Lower-triangular factor for the correlated driver increments;
        // fails with the offending eigenvalue when corr_d is not PSD.
        linalg::cholesky_psd(&self.corr_d, "corr_d")
    }

    pub fn m(&self) -> usize {
        self.mu_d.len()
    }
}

/// One simulated trajectory; arrays hold `steps + 1` rows including the
/// initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct PathData {
    pub p: Vec<f64>,
    pub d: Mat,
    pub rho: Mat,
}

/// A set of simulated trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    dt: f64,
    m: usize,
    nm: usize,
    paths: Vec<PathData>,
}

/// Copula-space state read off a path at one step: every constituent PIT
/// value moves one-for-one with the portfolio level.
pub struct PathState {
    pub p: f64,
    pub u: Vec<Prob>,
    pub d: DriverState,
    pub rho_flat: Vec<f64>,
    m: usize,
}

impl PathState {
    pub fn rho_mat(&self) -> Result<RhoMatrix> {
        let n = self.rho_flat.len() / self.m;
        RhoMatrix::new(Mat::from_fn(n, self.m, |i, j| {
            self.rho_flat[i * self.m + j]
        }))
    }
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(EPS_U, 1.0 - EPS_U)
}

impl PathSet {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Step count (transitions, not states).
    pub fn steps(&self) -> usize {
        self.paths
            .first()
            .map_or(0, |p| p.p.len().saturating_sub(1))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn paths(&self) -> &[PathData] {
        &self.paths
    }

    /// State at step `t` of one path, expanded to `n` constituents.
    pub fn state_at(&self, path: &PathData, t: usize, n: usize) -> Result<PathState> {
        if n * self.m != self.nm {
            return Err(CoreError::DimensionMismatch {
                what: format!("{n} constituents incompatible with {} pairs", self.nm),
            });
        }
        let up = Prob::new(clamp_unit(path.p[t]))?;
        let d = DriverState::new(
            (0..self.m)
                .map(|j| Prob::new(clamp_unit(path.d.get(t, j))))
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(PathState {
            p: path.p[t],
            u: vec![up; n],
            d,
            rho_flat: (0..self.nm).map(|k| path.rho.get(t, k)).collect(),
            m: self.m,
        })
    }
}

/// Simulate `n_paths` trajectories by Euler-Maruyama.
///
/// The portfolio level is arithmetic; drivers follow `driver_kind` with
/// Brownian increments correlated through the lower-triangular factor of
/// `corr_d`; correlations follow a GBM reflected back into
/// `[-(1 - EPS_RHO), 1 - EPS_RHO]`.
pub fn simulate(params: &ItoParams, n_paths: usize) -> Result<PathSet> {
    let chol = params.validate()?;
    let m = params.m();
    let nm = params.rho0.len();
    let sqrt_dt = params.dt.sqrt();
    let bound = 1.0 - EPS_RHO;
    let mut paths = Vec::with_capacity(n_paths);
    for path_idx in 0..n_paths {
        let mut rng = path_rng(params.seed, path_idx as u64);
        let mut p = Vec::with_capacity(params.steps + 1);
        let mut d = Mat::zeros(params.steps + 1, m);
        let mut rho = Mat::zeros(params.steps + 1, nm);
        p.push(params.p0);
        for j in 0..m {
            d.set(0, j, params.d0[j]);
        }
        for k in 0..nm {
            rho.set(0, k, params.rho0[k].clamp(-bound, bound));
        }
        let mut z_d = vec![0.0; m];
        for t in 0..params.steps {
            let z_p = rng.next_normal();
            for z in z_d.iter_mut() {
                *z = rng.next_normal();
            }
            let p_prev = p[t];
            p.push(p_prev + params.mu_p * params.dt + params.sigma_p * sqrt_dt * z_p);
            for j in 0..m {
                // Correlated increment: (L z)_j * sqrt(dt).
                let mut dw = 0.0;
                for k in 0..=j {
                    dw += chol.get(j, k) * z_d[k];
                }
                dw *= sqrt_dt;
                let prev = d.get(t, j);
                let next = match params.driver_kind {
                    ProcessKind::Arithmetic => {
                        prev + params.mu_d[j] * params.dt + params.sigma_d[j] * dw
                    }
                    ProcessKind::Geometric => {
                        prev + prev * (params.mu_d[j] * params.dt + params.sigma_d[j] * dw)
                    }
                };
                d.set(t + 1, j, next);
            }
            for k in 0..nm {
                let prev = rho.get(t, k);
                let z = rng.next_normal();
                let mut next = prev
                    + prev * (params.mu_rho[k] * params.dt + params.sigma_rho[k] * sqrt_dt * z);
                if next > bound {
                    next = 2.0 * bound - next;
                }
                if next < -bound {
                    next = -2.0 * bound - next;
                }
                hard_clamp(&mut next, bound);
                rho.set(t + 1, k, next);
            }
        }
        paths.push(PathData { p, d, rho });
    }
    Ok(PathSet {
        dt: params.dt,
        m,
        nm,
        paths,
    })
}

// After one reflection an extreme jump could still be outside; hard-clamp.
fn hard_clamp(x: &mut f64, bound: f64) {
    if *x > bound {
        *x = bound;
    }
    if *x < -bound {
        *x = -bound;
    }
}

/// Closed-form GBM driver covariance
/// `Cov(D_{t-1}^k, D_{t-1}^q) = e^{(mu_k + mu_q)(t-1)} (e^{rho sigma_k sigma_q t} - 1)`.
///
/// Evaluated verbatim, including the lag-one time origin of the first
/// exponent; the caller owns the time-origin interpretation.
pub fn gbm_covariance(
    mu_k: f64,
    mu_q: f64,
    rho_kq: f64,
    sigma_k: f64,
    sigma_q: f64,
    t: f64,
) -> f64 {
    ((mu_k + mu_q) * (t - 1.0)).exp() * ((rho_kq * sigma_k * sigma_q * t).exp() - 1.0)
}

/// Companion constituent covariance: zero across distinct constituents and
/// `e^{(mu_v + mu_z) t} (e^{sigma_v sigma_z t} - 1)` on the diagonal.
pub fn constituent_covariance(v: usize, z: usize, mu: &[f64], sigma: &[f64], t: f64) -> f64 {
    if v != z {
        return 0.0;
    }
    ((mu[v] + mu[z]) * t).exp() * ((sigma[v] * sigma[z] * t).exp() - 1.0)
}

/// Synthetic market generator parameters. Rates are per step.
#[derive(Debug, Clone)]
pub struct SyntheticMarketParams {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub driver_mu: f64,
    pub driver_sigma: f64,
    pub noise_sigma: f64,
    /// How many of the `m` driver columns the constituents actually load on
    /// (the rest are pure decoys); defaults to all of them.
    pub loaded_drivers: Option<usize>,
    pub loading: f64,
    pub seed: u64,
}

impl SyntheticMarketParams {
    pub fn basic(n: usize, m: usize, steps: usize, seed: u64) -> Self {
        SyntheticMarketParams {
            n,
            m,
            steps,
            driver_mu: 0.0,
            driver_sigma: 0.01,
            noise_sigma: 0.01,
            loaded_drivers: None,
            loading: 1.0,
            seed,
        }
    }
}

/// Generated return series with the ground truth the tests need.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub constituent_names: Vec<String>,
    pub driver_names: Vec<String>,
    /// Column-major series, constituents first then drivers, `steps` rows.
    pub columns: Vec<Vec<f64>>,
    /// Loading matrix actually used (`n x m`).
    pub loadings: Mat,
    /// Implanted correlation between a constituent at `t` and a driver at
    /// `t - 1`.
    pub true_rho: Mat,
}

/// Generate constituent returns as lag-one driver loadings plus independent
/// noise, so the true common drivers and the implanted correlations are
/// known exactly.
pub fn gen_synthetic_market(params: &SyntheticMarketParams) -> Result<SyntheticMarket> {
    if params.n == 0 || params.m == 0 || params.steps == 0 {
        return Err(CoreError::Contract {
            what: "n, m, steps must all be nonzero".into(),
        });
    }
    let loaded = params.loaded_drivers.unwrap_or(params.m).min(params.m);
    let loadings = Mat::from_fn(params.n, params.m, |_, j| {
        if j < loaded {
            params.loading
        } else {
            0.0
        }
    });
    // Driver per-step returns, one extra leading sample for the lag.
    let mut drv = path_rng(params.seed, 0);
    let mut driver_ret = vec![vec![0.0; params.steps + 1]; params.m];
    for t in 0..=params.steps {
        for col in driver_ret.iter_mut() {
            col[t] = params.driver_mu + params.driver_sigma * drv.next_normal();
        }
    }
    let mut columns = Vec::with_capacity(params.n + params.m);
    for i in 0..params.n {
        let mut noise = path_rng(params.seed, 1 + i as u64);
        let mut col = Vec::with_capacity(params.steps);
        for t in 0..params.steps {
            let mut r = params.noise_sigma * noise.next_normal();
            for j in 0..params.m {
                // Emitted row t pairs with the driver sample one step back.
                r += loadings.get(i, j) * driver_ret[j][t];
            }
            col.push(r);
        }
        columns.push(col);
    }
    for j in 0..params.m {
        columns.push(driver_ret[j][1..].to_vec());
    }
    let denom = {
        let loaded_var = (loaded as f64)
            * params.loading
            * params.loading
            * params.driver_sigma
            * params.driver_sigma;
        (loaded_var + params.noise_sigma * params.noise_sigma).sqrt()
    };
    let true_rho = Mat::from_fn(params.n, params.m, |i, j| {
        if denom == 0.0 {
            0.0
        } else {
            loadings.get(i, j) * params.driver_sigma / denom
        }
    });
    Ok(SyntheticMarket {
        constituent_names: (1..=params.n).map(|i| format!("A{i}")).collect(),
        driver_names: (1..=params.m).map(|j| format!("D{j}")).collect(),
        columns,
        loadings,
        true_rho,
    })
}
