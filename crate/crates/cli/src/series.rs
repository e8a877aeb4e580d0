//! Per-date copula-PDE deviation series over a return table: drift and
//! no-Brownian aggregates, per-pair contributions, realized volatility, the
//! time-difference mismatch series, and robust MAD event flags.

use chrono::NaiveDate;
use copula_pde_core::copula::Prob;
use copula_pde_core::linalg::Mat;
use copula_pde_core::pi::{
    conditional_prob, second_partials, DriverState, PiSystem, PortfolioSpec, RhoMatrix,
};
use copula_pde_core::residuals::{residual_report, Broadcast, VolParams};
use serde::Serialize;
use thiserror::Error;

use crate::rolling::{rolling_estimates, DateEstimates, RollingError, WindowConfig};
use crate::table::ReturnTable;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Rolling(#[from] RollingError),
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
    #[error("core error: {0}")]
    Core(#[from] copula_pde_core::CoreError),
    #[error("weights: expected {expected}, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("no evaluable dates (every date was skipped)")]
    NothingEvaluable,
    #[error("empty period: {0}")]
    EmptyPeriod(String),
}

/// Where the per-date volatility parameters come from.
#[derive(Debug, Clone, Default)]
pub enum VpSource {
    /// Window-estimated drifts and volatilities (the default).
    #[default]
    Realized,
    /// Pinned values used for every date.
    Pinned {
        sigma_p: f64,
        sigma_a_diag: Vec<f64>,
        sigma_d: Mat,
        mu_d: Vec<f64>,
    },
}

/// Event-flag configuration: a date is flagged when its deviation sits more
/// than `k` trailing MADs away from the trailing median.
#[derive(Debug, Clone, Serialize)]
pub struct FlagConfig {
    pub k: f64,
    /// Trailing history length the median/MAD are computed over.
    pub baseline: usize,
    /// Minimum history before any flag is emitted.
    pub min_history: usize,
}

impl Default for FlagConfig {
    fn default() -> Self {
        FlagConfig {
            k: 5.0,
            baseline: 250,
            min_history: 60,
        }
    }
}

/// Full configuration of the residual series run.
#[derive(Debug, Clone, Default)]
pub struct SeriesConfig {
    pub window: WindowConfig,
    pub flags: FlagConfig,
    pub vp: VpSource,
    pub broadcast: Broadcast,
}

/// One evaluated date.
#[derive(Debug, Clone)]
pub struct DatePoint {
    pub date: NaiveDate,
    /// Row index in the source table.
    pub index: usize,
    /// Per-driver drift residual.
    pub delta: Vec<f64>,
    pub delta_aggregate: f64,
    pub brownian_aggregate: f64,
    /// Annualized realized portfolio volatility over the trailing window.
    pub realized_vol: f64,
    /// Per-pair contributions `w_i T_ij` (NaN where the pair was undefined).
    pub per_pair: Mat,
    /// Observed-minus-predicted one-step change of `P(p|D)` (the
    /// time-derivative route); `None` at the first evaluable date.
    pub ito_mismatch: Option<f64>,
    /// MAD event flag on the drift aggregate.
    pub flag: bool,
    /// MAD event flags per pair.
    pub pair_flags: Vec<Vec<bool>>,
}

/// The evaluated series plus skipped dates with reasons.
#[derive(Debug, Clone)]
pub struct ResidualSeries {
    pub constituents: Vec<String>,
    pub drivers: Vec<String>,
    pub weights: Vec<f64>,
    pub points: Vec<DatePoint>,
    pub skipped: Vec<(NaiveDate, String)>,
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median absolute deviation around the median (no consistency scaling).
fn mad(values: &[f64]) -> (f64, f64) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let med = median_sorted(&sorted);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    (med, median_sorted(&dev))
}

/// MAD flag pass over one series: `flags[t]` is true when `|x_t - med| >
/// k * MAD` of the trailing (exclusive) history. NaN entries neither flag
/// nor enter the history.
pub fn mad_flags(values: &[f64], cfg: &FlagConfig) -> Vec<bool> {
    let mut flags = vec![false; values.len()];
    let mut history: Vec<f64> = Vec::new();
    for (t, &x) in values.iter().enumerate() {
        if history.len() >= cfg.min_history && x.is_finite() {
            let start = history.len().saturating_sub(cfg.baseline);
            let (med, m) = mad(&history[start..]);
            if m > 0.0 && (x - med).abs() > cfg.k * m {
                flags[t] = true;
            }
        }
        if x.is_finite() {
            history.push(x);
        }
    }
    flags
}

struct DateSystem {
    sys: PiSystem,
    d_state: DriverState,
    vp: VolParams,
    defined: Vec<Vec<bool>>,
    fully_defined: bool,
}

/// Build the copula system and volatility parameters for one estimated
/// date. Undefined pairs get a zero correlation inside the system (their
/// outputs are masked to NaN afterwards, never reported as zero).
fn build_date_system(
    est: &DateEstimates,
    cfg: &SeriesConfig,
    ps: &PortfolioSpec,
    n: usize,
    m: usize,
) -> Result<DateSystem, SeriesError> {
    let mut defined = vec![vec![true; m]; n];
    let mut fully = true;
    for i in 0..n {
        for j in 0..m {
            let ok = est.rho.get(i, j).is_finite() && est.u[i].is_finite() && est.d[j].is_finite();
            defined[i][j] = ok;
            fully &= ok;
        }
    }
    let u: Vec<Prob> = est
        .u
        .iter()
        .map(|&x| Prob::new(if x.is_finite() { x } else { 0.5 }))
        .collect::<Result<_, _>>()?;
    let d_state = DriverState::from_raw(
        &est.d
            .iter()
            .map(|&x| if x.is_finite() { x } else { 0.5 })
            .collect::<Vec<f64>>(),
    )?;
    let rho = RhoMatrix::new(Mat::from_fn(n, m, |i, j| {
        let r = est.rho.get(i, j);
        if r.is_finite() {
            r
        } else {
            0.0
        }
    }))?;
    let sys = PiSystem::build(&u, &d_state, &rho)?;
    let vp = match &cfg.vp {
        VpSource::Realized => {
            let sigma_p = {
                // Portfolio vol from the weighted constituent windows is
                // computed by the caller; the per-column fallback keeps the
                // parameters usable when a column was degenerate.
                let mut acc = 0.0;
                for i in 0..n {
                    let s = if est.sigma_a[i].is_finite() {
                        est.sigma_a[i]
                    } else {
                        0.0
                    };
                    acc += ps.weights()[i] * ps.weights()[i] * s * s;
                }
                acc.sqrt()
            };
            VolParams::new(
                sigma_p,
                est.sigma_a
                    .iter()
                    .map(|s| if s.is_finite() { s * s } else { 0.0 })
                    .collect(),
                est.sigma_d.clone(),
                est.mu_d
                    .iter()
                    .map(|x| if x.is_finite() { *x } else { 0.0 })
                    .collect(),
                vec![0.0; n * m],
                vec![0.0; n * m],
            )?
        }
        VpSource::Pinned {
            sigma_p,
            sigma_a_diag,
            sigma_d,
            mu_d,
        } => {
            if sigma_a_diag.len() != n || mu_d.len() != m {
                return Err(SeriesError::Core(copula_pde_core::CoreError::DimensionMismatch {
                    what: format!(
                        "pinned parameters sized for {} constituents / {} drivers, run has {n} / {m}",
                        sigma_a_diag.len(),
                        mu_d.len()
                    ),
                }));
            }
            VolParams::new(
                *sigma_p,
                sigma_a_diag.clone(),
                sigma_d.clone(),
                mu_d.clone(),
                vec![0.0; n * m],
                vec![0.0; n * m],
            )?
        }
    };
    Ok(DateSystem {
        sys,
        d_state,
        vp,
        defined,
        fully_defined: fully,
    })
}

/// Observed-minus-predicted one-step change of the conditional probability
/// between two fully-defined consecutive dates.
fn ito_mismatch_step(
    prev: &DateSystem,
    cur: &DateSystem,
    prev_est: &DateEstimates,
    cur_est: &DateEstimates,
    ps: &PortfolioSpec,
    dt: f64,
) -> Result<f64, SeriesError> {
    let p0 = conditional_prob(ps, &prev.sys, &prev.d_state)?;
    let p1 = conditional_prob(ps, &cur.sys, &cur.d_state)?;
    let n = prev.sys.n;
    let m = prev.sys.m;
    let w = ps.weights();
    let d0 = prev.d_state.values();
    let mut pred = 0.0;
    // First-order terms with realized increments, per argument.
    for i in 0..n {
        let mut dp_du = 0.0;
        for j in 0..m {
            dp_du -= w[i] * prev.sys.d_u.get(i, j) * d0[j];
        }
        pred += dp_du * (cur_est.u[i] - prev_est.u[i]);
    }
    for j in 0..m {
        let mut dp_dd = 0.0;
        for i in 0..n {
            dp_dd -= w[i] * (prev.sys.d_v.get(i, j) * d0[j] + prev.sys.pi.get(i, j));
        }
        pred += dp_dd * (cur_est.d[j] - prev_est.d[j]);
    }
    for i in 0..n {
        for j in 0..m {
            let dp_drho = -w[i] * prev.sys.d_rho.get(i, j) * d0[j];
            pred += dp_drho * (cur_est.rho.get(i, j) - prev_est.rho.get(i, j));
        }
    }
    // Second-order dt terms.
    let sp = second_partials(ps, &prev.sys, &prev.d_state)?;
    let mut quad = 0.5 * sp.dpp * prev.vp.sigma_p * prev.vp.sigma_p;
    for j in 0..m {
        quad += 0.5 * sp.ddd[j] * prev.vp.sigma_d.get(j, j);
    }
    let mixed = prev.vp.sqrt_sigma_d().mul_vec(&sp.dpd)?;
    for j in 0..m {
        quad += prev.vp.sigma_p * mixed[j];
    }
    pred += quad * dt;
    Ok(p1 - p0 - pred)
}

/// Evaluate the residual series.
pub fn residual_series(
    table: &ReturnTable,
    cfg: &SeriesConfig,
    ps: &PortfolioSpec,
    constituents: &[String],
    drivers: &[String],
) -> Result<ResidualSeries, SeriesError> {
    let n = constituents.len();
    let m = drivers.len();
    if ps.n() != n {
        return Err(SeriesError::WeightCount {
            expected: n,
            got: ps.n(),
        });
    }
    let estimates = rolling_estimates(table, &cfg.window, constituents, drivers)?;
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut prev: Option<(DateSystem, DateEstimates)> = None;
    let dt = 1.0 / cfg.window.annualization;
    for est in estimates {
        let date = table.dates()[est.index];
        let ds = match build_date_system(&est, cfg, ps, n, m) {
            Ok(ds) => ds,
            Err(e) => {
                skipped.push((date, e.to_string()));
                prev = None;
                continue;
            }
        };
        let report = residual_report(ps, &ds.sys, &ds.d_state, &ds.vp, cfg.broadcast)?;
        let (_, realized_vol) = crate::rolling::portfolio_window_stats(
            table,
            constituents,
            ps.weights(),
            est.index,
            &cfg.window,
        )?;
        let mut per_pair = report.per_pair.clone();
        for i in 0..n {
            for j in 0..m {
                if !ds.defined[i][j] {
                    per_pair.set(i, j, f64::NAN);
                }
            }
        }
        let ito_mismatch = match &prev {
            Some((prev_ds, prev_est)) if ds.fully_defined && prev_ds.fully_defined => {
                Some(ito_mismatch_step(prev_ds, &ds, prev_est, &est, ps, dt)?)
            }
            _ => None,
        };
        points.push(DatePoint {
            date,
            index: est.index,
            delta: report.delta.clone(),
            delta_aggregate: if ds.fully_defined {
                report.delta_aggregate
            } else {
                f64::NAN
            },
            brownian_aggregate: report.brownian_aggregate,
            realized_vol,
            per_pair,
            ito_mismatch,
            flag: false,
            pair_flags: vec![vec![false; m]; n],
        });
        prev = Some((ds, est));
    }
    if points.is_empty() {
        return Err(SeriesError::NothingEvaluable);
    }
    // Flag pass on the aggregate and per-pair series.
    let agg: Vec<f64> = points.iter().map(|p| p.delta_aggregate).collect();
    let flags = mad_flags(&agg, &cfg.flags);
    for (p, f) in points.iter_mut().zip(&flags) {
        p.flag = *f;
    }
    for i in 0..n {
        for j in 0..m {
            let series: Vec<f64> = points.iter().map(|p| p.per_pair.get(i, j)).collect();
            let flags = mad_flags(&series, &cfg.flags);
            for (p, f) in points.iter_mut().zip(&flags) {
                p.pair_flags[i][j] = *f;
            }
        }
    }
    Ok(ResidualSeries {
        constituents: constituents.to_vec(),
        drivers: drivers.to_vec(),
        weights: ps.weights().to_vec(),
        points,
        skipped,
    })
}

/// Period sums of the per-pair deviations.
#[derive(Debug, Clone, Serialize)]
pub struct SumReport {
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub dates_used: usize,
    /// Row-major `n x m` sums.
    pub per_pair: Vec<Vec<f64>>,
    pub total: f64,
}

/// Sum the per-pair deviations over `[from, to]` (inclusive); NaN entries
/// are skipped.
pub fn sum_series(
    rs: &ResidualSeries,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<SumReport, SeriesError> {
    if to < from {
        return Err(SeriesError::EmptyPeriod(format!(
            "{from}..{to} is inverted"
        )));
    }
    let n = rs.constituents.len();
    let m = rs.drivers.len();
    let mut per_pair = vec![vec![0.0; m]; n];
    let mut used = 0;
    for p in &rs.points {
        if p.date < from || p.date > to {
            continue;
        }
        used += 1;
        for (i, row) in per_pair.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let v = p.per_pair.get(i, j);
                if v.is_finite() {
                    *cell += v;
                }
            }
        }
    }
    if used == 0 {
        return Err(SeriesError::EmptyPeriod(format!(
            "no evaluated dates in {from}..{to}"
        )));
    }
    let total = per_pair.iter().flatten().sum();
    Ok(SumReport {
        from,
        to,
        dates_used: used,
        per_pair,
        total,
    })
}
