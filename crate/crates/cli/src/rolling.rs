//! Rolling-window estimation: lag-one constituent/driver correlations,
//! annualized drifts and volatilities, and the probability integral
//! transform feeding the copula layer.
//!
//! Lag discipline: everything used at date `t` depends on constituent data
//! up to `t` and driver data up to `t - 1` only. The estimates at `t` pair
//! the constituent window `(t-L+1)..=t` with the driver window
//! `(t-L)..=(t-1)`.

use copula_pde_core::linalg::Mat;
use copula_pde_core::normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::ReturnTable;

#[derive(Debug, Error)]
pub enum RollingError {
    #[error("window length {0} below the minimum of 20")]
    WindowTooShort(usize),
    #[error("min_periods {min_periods} exceeds window length {length}")]
    MinPeriods { min_periods: usize, length: usize },
    #[error("annualization factor must be positive")]
    BadAnnualization,
    #[error("window does not fit: need {need} rows, table has {have}")]
    WindowDoesNotFit { need: usize, have: usize },
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
}

/// Probability-integral-transform method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PitMethod {
    /// `u = rank / (N + 1)` within the trailing window.
    #[default]
    EmpiricalRank,
    /// `u = Phi((x - mean) / std)` with window moments.
    GaussianFit,
}

/// Rolling-window configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub pit: PitMethod,
    pub min_periods: usize,
    pub annualization: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: 60,
            pit: PitMethod::EmpiricalRank,
            min_periods: 60,
            annualization: 252.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), RollingError> {
        if self.length < 20 {
            return Err(RollingError::WindowTooShort(self.length));
        }
        if self.min_periods > self.length {
            return Err(RollingError::MinPeriods {
                min_periods: self.min_periods,
                length: self.length,
            });
        }
        if !(self.annualization > 0.0) {
            return Err(RollingError::BadAnnualization);
        }
        Ok(())
    }
}

/// Why a pair or column has no estimate at a date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EstimateIssue {
    pub what: String,
    pub reason: String,
}

/// Per-date estimate set. Undefined values are NaN with a matching entry in
/// `issues`; they are excluded downstream, never silently zero.
#[derive(Debug, Clone)]
pub struct DateEstimates {
    /// Row index in the source table.
    pub index: usize,
    /// Constituent PIT values at `t`.
    pub u: Vec<f64>,
    /// Driver PIT values at `t - 1`.
    pub d: Vec<f64>,
    /// Lag-one correlation estimates (`n x m`).
    pub rho: Mat,
    /// Annualized constituent volatilities.
    pub sigma_a: Vec<f64>,
    /// Annualized constituent drifts.
    pub mu_a: Vec<f64>,
    /// Annualized driver covariance (`m x m`).
    pub sigma_d: Mat,
    /// Annualized driver drifts.
    pub mu_d: Vec<f64>,
    pub issues: Vec<EstimateIssue>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

const DEGENERATE_VAR: f64 = 1e-24;

/// Pearson correlation of two aligned slices; `None` when either side has
/// (numerically) zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let ma = mean(a);
    let mb = mean(b);
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if saa <= DEGENERATE_VAR || sbb <= DEGENERATE_VAR {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// PIT of the last value of `window` (the value at the estimate date)
/// within the whole window.
pub fn pit_value(window: &[f64], method: PitMethod) -> Option<f64> {
    let value = *window.last()?;
    match method {
        PitMethod::EmpiricalRank => {
            // rank / (N + 1), with ties averaged.
            let n = window.len();
            let below = window.iter().filter(|&&x| x < value).count();
            let equal = window.iter().filter(|&&x| x == value).count();
            let rank = below as f64 + 0.5 * (equal as f64 + 1.0);
            Some(rank / (n as f64 + 1.0))
        }
        PitMethod::GaussianFit => {
            let m = mean(window);
            let v = sample_var(window, m);
            if v <= DEGENERATE_VAR {
                return None;
            }
            // Clamp into the copula-usable interior.
            Some(normal::cdf((value - m) / v.sqrt()).clamp(1e-9, 1.0 - 1e-9))
        }
    }
}

/// Rolling estimates for the given constituent and driver columns at every
/// date where the window fits. The first evaluable row index is `length`
/// (the driver window needs one extra lag row).
pub fn rolling_estimates(
    table: &ReturnTable,
    wc: &WindowConfig,
    constituents: &[String],
    drivers: &[String],
) -> Result<Vec<DateEstimates>, RollingError> {
    wc.validate()?;
    let need = wc.length + 1;
    if table.len() < need {
        return Err(RollingError::WindowDoesNotFit {
            need,
            have: table.len(),
        });
    }
    let a_cols: Vec<&[f64]> = constituents
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<_, _>>()?;
    let d_cols: Vec<&[f64]> = drivers
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<_, _>>()?;
    let n = a_cols.len();
    let m = d_cols.len();
    let len = wc.length;
    let ann = wc.annualization;
    let mut out = Vec::new();
    for t in len..table.len() {
        let mut issues = Vec::new();
        let a_windows: Vec<&[f64]> = a_cols.iter().map(|c| &c[t + 1 - len..=t]).collect();
        let d_windows: Vec<&[f64]> = d_cols.iter().map(|c| &c[t - len..t]).collect();

        let mut u = vec![f64::NAN; n];
        let mut sigma_a = vec![f64::NAN; n];
        let mut mu_a = vec![f64::NAN; n];
        for i in 0..n {
            let w = a_windows[i];
            let mw = mean(w);
            let vw = sample_var(w, mw);
            mu_a[i] = mw * ann;
            if vw <= DEGENERATE_VAR {
                issues.push(EstimateIssue {
                    what: constituents[i].clone(),
                    reason: "zero variance in window".into(),
                });
            } else {
                sigma_a[i] = (vw * ann).sqrt();
            }
            match pit_value(w, wc.pit) {
                Some(p) => u[i] = p,
                None => issues.push(EstimateIssue {
                    what: format!("pit({})", constituents[i]),
                    reason: "degenerate window".into(),
                }),
            }
        }

        let mut d = vec![f64::NAN; m];
        let mut mu_d = vec![f64::NAN; m];
        let mut d_means = vec![0.0; m];
        for j in 0..m {
            let w = d_windows[j];
            d_means[j] = mean(w);
            mu_d[j] = d_means[j] * ann;
            match pit_value(w, wc.pit) {
                Some(p) => d[j] = p,
                None => issues.push(EstimateIssue {
                    what: format!("pit({})", drivers[j]),
                    reason: "degenerate window".into(),
                }),
            }
        }
        let sigma_d = Mat::from_fn(m, m, |j, k| {
            let wj = d_windows[j];
            let wk = d_windows[k];
            let cov = wj
                .iter()
                .zip(wk)
                .map(|(x, y)| (x - d_means[j]) * (y - d_means[k]))
                .sum::<f64>()
                / (len as f64 - 1.0);
            cov * ann
        });

        let mut rho = Mat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                match pearson(a_windows[i], d_windows[j]) {
                    Some(r) => rho.set(i, j, r),
                    None => {
                        rho.set(i, j, f64::NAN);
                        issues.push(EstimateIssue {
                            what: format!("rho({}, {})", constituents[i], drivers[j]),
                            reason: "zero variance in window".into(),
                        });
                    }
                }
            }
        }
        out.push(DateEstimates {
            index: t,
            u,
            d,
            rho,
            sigma_a,
            mu_a,
            sigma_d,
            mu_d,
            issues,
        });
    }
    Ok(out)
}

/// Annualized rolling mean/volatility of a weighted portfolio at row `t`.
pub fn portfolio_window_stats(
    table: &ReturnTable,
    constituents: &[String],
    weights: &[f64],
    t: usize,
    wc: &WindowConfig,
) -> Result<(f64, f64), RollingError> {
    let cols: Vec<&[f64]> = constituents
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<_, _>>()?;
    let len = wc.length;
    let series: Vec<f64> = (t + 1 - len..=t)
        .map(|s| cols.iter().zip(weights).map(|(c, w)| w * c[s]).sum())
        .collect();
    let m = mean(&series);
    let v = sample_var(&series, m);
    Ok((m * wc.annualization, (v * wc.annualization).sqrt()))
}
