//! Command-line surface.
//!
//! Subcommands: `gen`, `estimate`, `residuals`, `sum`, `select`, `implied`,
//! `simulate-check`. Every run writes a JSON manifest echoing the resolved
//! configuration and the sha256 of each input. Exit codes: 0 success, 1
//! data/numeric error (with a one-line JSON error record on stderr), 2
//! usage error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use copula_pde_core::linalg::Mat;
use copula_pde_core::pi::{PiSystem, PortfolioSpec};
use copula_pde_core::residuals::{
    assemble_implied_system, consistency_check_setup, Broadcast, ImpliedSystem, VolParams,
};
use copula_pde_core::sim::{gen_synthetic_market, simulate, SyntheticMarketParams};
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::rolling::{rolling_estimates, PitMethod, WindowConfig};
use crate::select::{
    revision_signal, select, LossKind, RevisionPolicy, SearchMode, SelectionProblem,
};
use crate::series::{residual_series, FlagConfig, SeriesConfig, VpSource};
use crate::table::{
    load_returns, synthetic_to_table, table_to_csv, write_atomic, MissingPolicy, ReturnTable,
};

/// Environment variable naming the default data directory for relative
/// paths.
pub const DATA_DIR_ENV: &str = "COPULA_PDE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "copula-pde",
    about = "Common-driver copula PDE residuals over rolling return windows",
    version
)]
struct Cli {
    /// Plain key=value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic return table with known implanted drivers.
    Gen(GenArgs),
    /// Rolling-window correlation/volatility/PIT estimates.
    Estimate(EstimateArgs),
    /// Per-date copula-PDE deviation series with event flags.
    Residuals(ResidualsArgs),
    /// Sum per-pair deviations over a period.
    Sum(SumArgs),
    /// Select drivers by minimizing the deviation loss.
    Select(SelectArgs),
    /// Implied weights / implied variances from the stacked PDE system.
    Implied(ImpliedArgs),
    /// Ito-consistency convergence check of the simulator.
    SimulateCheck(SimulateCheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PitArg {
    Rank,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    DropRow,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BroadcastArg {
    Uniform,
    DriverProportional,
}

#[derive(Debug, Args, Clone)]
struct WindowArgs {
    /// Rolling window length (observations).
    #[arg(long)]
    window: Option<usize>,
    /// Probability-integral-transform method.
    #[arg(long, value_enum)]
    pit: Option<PitArg>,
    /// Annualization factor.
    #[arg(long)]
    annualization: Option<f64>,
    /// Missing-cell policy for input parsing.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    driver_mu: f64,
    #[arg(long, default_value_t = 0.01)]
    driver_sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    /// How many drivers the constituents load on (default: all).
    #[arg(long)]
    loaded: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    loading: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Comma-separated constituent column names.
    #[arg(long, value_delimiter = ',')]
    constituents: Vec<String>,
    /// Comma-separated driver column names.
    #[arg(long, value_delimiter = ',')]
    drivers: Vec<String>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ResidualsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    drivers: Vec<String>,
    /// Constituent columns (default: every non-driver column).
    #[arg(long, value_delimiter = ',')]
    constituents: Vec<String>,
    /// `equal` or a comma-separated weight list.
    #[arg(long, default_value = "equal")]
    weights: String,
    /// MAD flag multiplier.
    #[arg(long)]
    k: Option<f64>,
    /// Trailing history for the MAD baseline.
    #[arg(long)]
    mad_baseline: Option<usize>,
    /// Minimum history before flags are emitted.
    #[arg(long)]
    mad_min: Option<usize>,
    #[arg(long, value_enum)]
    broadcast: Option<BroadcastArg>,
    #[command(flatten)]
    window: WindowArgs,
    /// Output directory (pairs.csv, aggregates.csv, manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Also export the stacked implied system of the last evaluable date.
    #[arg(long)]
    export_system: Option<PathBuf>,
    /// Also evaluate the driver-set revision signal and record it in the
    /// manifest.
    #[arg(long, default_value_t = false)]
    revision_signal: bool,
}

#[derive(Debug, Args)]
struct SumArgs {
    /// pairs.csv produced by `residuals` (or its directory).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    #[arg(long)]
    m: usize,
    #[arg(long, value_enum, default_value = "exhaustive")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "mean-abs-delta")]
    loss: LossArg,
    #[arg(long, value_delimiter = ',')]
    constituents: Vec<String>,
    #[arg(long, default_value = "equal")]
    weights: String,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    MeanAbsDelta,
    MeanSqDelta,
    SumAbsPair,
}

#[derive(Debug, Args)]
struct ImpliedArgs {
    /// Market CSV input (alternative to --system).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    drivers: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    constituents: Vec<String>,
    /// Number of trailing evaluable dates to stack (default: enough for
    /// full column rank).
    #[arg(long)]
    stack: Option<usize>,
    /// Previously exported system JSON (alternative to --in).
    #[arg(long)]
    system: Option<PathBuf>,
    /// `equal` or a weight list: solve for implied variances.
    #[arg(long)]
    weights: Option<String>,
    /// Comma-separated constituent variances: solve for implied weights.
    #[arg(long, value_delimiter = ',')]
    variances: Vec<f64>,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateCheckArgs {
    /// Comma-separated dt levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.005, 0.0025])]
    dt: Vec<f64>,
    #[arg(long, default_value_t = 0.32)]
    horizon: f64,
    #[arg(long, default_value_t = 64)]
    paths: usize,
    #[arg(long, default_value_t = 424242)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Data/numeric failure carrying a machine-readable record.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

enum AppError {
    Usage(String),
    Data(ErrorRecord),
}

type AppResult<T> = Result<T, AppError>;

fn data_err(kind: &str, message: impl ToString) -> AppError {
    AppError::Data(ErrorRecord {
        kind: kind.to_string(),
        message: message.to_string(),
    })
}

macro_rules! impl_from_err {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for AppError {
            fn from(e: $ty) -> Self {
                data_err($kind, e)
            }
        }
    };
}

impl_from_err!(crate::table::TableError, "table");
impl_from_err!(crate::rolling::RollingError, "rolling");
impl_from_err!(crate::series::SeriesError, "series");
impl_from_err!(crate::select::SelectError, "select");
impl_from_err!(crate::select::RevisionError, "revision");
impl_from_err!(copula_pde_core::CoreError, "core");
impl_from_err!(serde_json::Error, "json");

/// Entry point used by both the binary and the tests.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with exit 0 semantics.
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign { 0 } else { 2 };
        }
    };
    let config = match FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args, &config),
        Command::Estimate(args) => cmd_estimate(args, &config),
        Command::Residuals(args) => cmd_residuals(args, &config),
        Command::Sum(args) => cmd_sum(args, &config),
        Command::Select(args) => cmd_select(args, &config),
        Command::Implied(args) => cmd_implied(args, &config),
        Command::SimulateCheck(args) => cmd_simulate_check(args, &config),
    };
    match result {
        Ok(()) => 0,
        Err(AppError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(AppError::Data(record)) => {
            let line = serde_json::to_string(&serde_json::json!({ "error": record }))
                .unwrap_or_else(|_| format!("{{\"error\":{{\"message\":{:?}}}}}", record.message));
            eprintln!("{line}");
            1
        }
    }
}

/// Plain key=value configuration file plus the data-dir environment
/// variable. Recognized keys: window, pit, annualization, policy, k,
/// mad_baseline, mad_min, data_dir.
#[derive(Debug, Default)]
struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            if !dir.is_empty() {
                values.insert("data_dir".to_string(), dir);
            }
        }
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(format!(
                        "config {} line {}: expected key=value",
                        path.display(),
                        idx + 1
                    ));
                };
                values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(FileConfig { values })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, AppError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| AppError::Usage(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    /// Resolve a path against `data_dir` when it is relative.
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            return path.to_path_buf();
        }
        match self.values.get("data_dir") {
            Some(dir) => Path::new(dir).join(path),
            None => path.to_path_buf(),
        }
    }
}

fn window_config(args: &WindowArgs, config: &FileConfig) -> AppResult<WindowConfig> {
    let mut wc = WindowConfig::default();
    if let Some(v) = config.get::<usize>("window")? {
        wc.length = v;
        wc.min_periods = v;
    }
    if let Some(v) = config.values.get("pit") {
        wc.pit = match v.as_str() {
            "rank" | "empirical-rank" => PitMethod::EmpiricalRank,
            "gaussian" | "gaussian-fit" => PitMethod::GaussianFit,
            other => {
                return Err(AppError::Usage(format!(
                    "config key pit: unknown value {other:?}"
                )))
            }
        };
    }
    if let Some(v) = config.get::<f64>("annualization")? {
        wc.annualization = v;
    }
    if let Some(v) = args.window {
        wc.length = v;
        wc.min_periods = v;
    }
    if let Some(p) = args.pit {
        wc.pit = match p {
            PitArg::Rank => PitMethod::EmpiricalRank,
            PitArg::Gaussian => PitMethod::GaussianFit,
        };
    }
    if let Some(a) = args.annualization {
        wc.annualization = a;
    }
    wc.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    Ok(wc)
}

fn missing_policy(args: &WindowArgs, config: &FileConfig) -> AppResult<MissingPolicy> {
    if let Some(p) = args.policy {
        return Ok(match p {
            PolicyArg::Strict => MissingPolicy::Strict,
            PolicyArg::DropRow => MissingPolicy::DropRow,
        });
    }
    match config.values.get("policy").map(String::as_str) {
        None | Some("strict") => Ok(MissingPolicy::Strict),
        Some("drop-row") => Ok(MissingPolicy::DropRow),
        Some(other) => Err(AppError::Usage(format!(
            "config key policy: unknown value {other:?}"
        ))),
    }
}

fn parse_date(s: &str) -> AppResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| AppError::Usage(format!("bad date {s:?}, expected YYYY-MM-DD")))
}

fn parse_weights(spec: &str, n: usize) -> AppResult<PortfolioSpec> {
    if spec == "equal" {
        return PortfolioSpec::equal(n).map_err(|e| data_err("core", e));
    }
    let weights: Result<Vec<f64>, _> = spec.split(',').map(str::trim).map(str::parse).collect();
    let weights = weights.map_err(|_| AppError::Usage(format!("bad weight list {spec:?}")))?;
    if weights.len() != n {
        return Err(AppError::Usage(format!(
            "{} weights for {} constituents",
            weights.len(),
            n
        )));
    }
    PortfolioSpec::new(weights).map_err(|e| data_err("core", e))
}

fn load_table(
    path: &Path,
    policy: MissingPolicy,
    manifest: &mut RunManifest,
) -> AppResult<ReturnTable> {
    let loaded = load_returns(path, policy)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    manifest.record_input(path)?;
    Ok(loaded.table)
}

fn default_constituents(
    table: &ReturnTable,
    drivers: &[String],
    explicit: &[String],
) -> Vec<String> {
    if !explicit.is_empty() {
        return explicit.to_vec();
    }
    table
        .names()
        .iter()
        .filter(|n| !drivers.contains(n))
        .cloned()
        .collect()
}

fn fmt_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn cmd_gen(args: GenArgs, config: &FileConfig) -> AppResult<()> {
    let out = config.resolve(&args.out);
    let params = SyntheticMarketParams {
        n: args.n,
        m: args.m,
        steps: args.steps,
        driver_mu: args.driver_mu,
        driver_sigma: args.driver_sigma,
        noise_sigma: args.noise_sigma,
        loaded_drivers: args.loaded,
        loading: args.loading,
        seed: args.seed,
    };
    let market = gen_synthetic_market(&params)?;
    let table = synthetic_to_table(&market)?;
    write_atomic(&out, table_to_csv(&table).as_bytes())?;
    let mut manifest = RunManifest::new(
        "gen",
        serde_json::json!({
            "n": args.n, "m": args.m, "steps": args.steps, "seed": args.seed,
            "driver_mu": args.driver_mu, "driver_sigma": args.driver_sigma,
            "noise_sigma": args.noise_sigma,
            "loaded": args.loaded.unwrap_or(args.m), "loading": args.loading,
            "true_rho": mat_rows(&market.true_rho),
        }),
    );
    manifest.record_hashed_output(&out)?;
    manifest.write(&manifest_path(&out))?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    name.push_str(".manifest.json");
    out.with_file_name(name)
}

fn mat_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn cmd_estimate(args: EstimateArgs, config: &FileConfig) -> AppResult<()> {
    if args.constituents.is_empty() || args.drivers.is_empty() {
        return Err(AppError::Usage(
            "--constituents and --drivers must be non-empty".into(),
        ));
    }
    let input = config.resolve(&args.input);
    let out = config.resolve(&args.out);
    let wc = window_config(&args.window, config)?;
    let policy = missing_policy(&args.window, config)?;
    let mut manifest = RunManifest::new(
        "estimate",
        serde_json::json!({
            "constituents": args.constituents, "drivers": args.drivers,
            "window": wc, "policy": format!("{policy:?}"),
        }),
    );
    let table = load_table(&input, policy, &mut manifest)?;
    let estimates = rolling_estimates(&table, &wc, &args.constituents, &args.drivers)?;
    let mut csv = String::from("date,constituent,driver,rho,u,d,sigma_constituent,mu_driver\n");
    for est in &estimates {
        let date = table.dates()[est.index];
        for (i, cname) in args.constituents.iter().enumerate() {
            for (j, dname) in args.drivers.iter().enumerate() {
                csv.push_str(&format!(
                    "{date},{cname},{dname},{},{},{},{},{}\n",
                    fmt_cell(est.rho.get(i, j)),
                    fmt_cell(est.u[i]),
                    fmt_cell(est.d[j]),
                    fmt_cell(est.sigma_a[i]),
                    fmt_cell(est.mu_d[j]),
                ));
            }
        }
    }
    write_atomic(&out, csv.as_bytes())?;
    manifest.record_output(&file_name(&out));
    manifest.write(&manifest_path(&out))?;
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn series_config(
    args_window: &WindowArgs,
    k: Option<f64>,
    mad_baseline: Option<usize>,
    mad_min: Option<usize>,
    broadcast: Option<BroadcastArg>,
    config: &FileConfig,
) -> AppResult<SeriesConfig> {
    let window = window_config(args_window, config)?;
    let mut flags = FlagConfig::default();
    if let Some(v) = config.get::<f64>("k")? {
        flags.k = v;
    }
    if let Some(v) = config.get::<usize>("mad_baseline")? {
        flags.baseline = v;
    }
    if let Some(v) = config.get::<usize>("mad_min")? {
        flags.min_history = v;
    }
    if let Some(v) = k {
        flags.k = v;
    }
    if let Some(v) = mad_baseline {
        flags.baseline = v;
    }
    if let Some(v) = mad_min {
        flags.min_history = v;
    }
    let broadcast = match broadcast {
        Some(BroadcastArg::Uniform) | None => Broadcast::Uniform,
        Some(BroadcastArg::DriverProportional) => Broadcast::DriverProportional,
    };
    Ok(SeriesConfig {
        window,
        flags,
        vp: pinned_vp(config)?,
        broadcast,
    })
}

/// Volatility-parameter stanza: window-estimated by default, pinned when
/// the config file carries the full `pin_*` set.
fn pinned_vp(config: &FileConfig) -> AppResult<VpSource> {
    let keys = ["pin_sigma_p", "pin_sigma_a", "pin_sigma_d", "pin_mu_d"];
    let present = keys
        .iter()
        .filter(|k| config.values.contains_key(**k))
        .count();
    if present == 0 {
        return Ok(VpSource::Realized);
    }
    if present != keys.len() {
        return Err(AppError::Usage(
            "pinned volatility parameters need all of pin_sigma_p, pin_sigma_a, \
             pin_sigma_d, pin_mu_d"
                .into(),
        ));
    }
    let list = |key: &str| -> AppResult<Vec<f64>> {
        let raw = &config.values[key];
        raw.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    AppError::Usage(format!("config key {key}: bad number in {raw:?}"))
                })
            })
            .collect()
    };
    let sigma_p = config
        .get::<f64>("pin_sigma_p")?
        .expect("presence checked above");
    let sigma_a = list("pin_sigma_a")?;
    let sigma_d_diag = list("pin_sigma_d")?;
    let mu_d = list("pin_mu_d")?;
    if sigma_d_diag.len() != mu_d.len() {
        return Err(AppError::Usage(
            "pin_sigma_d and pin_mu_d must have the same driver count".into(),
        ));
    }
    let m = mu_d.len();
    Ok(VpSource::Pinned {
        sigma_p,
        sigma_a_diag: sigma_a.iter().map(|s| s * s).collect(),
        sigma_d: Mat::from_fn(m, m, |i, j| {
            if i == j {
                sigma_d_diag[i] * sigma_d_diag[i]
            } else {
                0.0
            }
        }),
        mu_d,
    })
}

fn cmd_residuals(args: ResidualsArgs, config: &FileConfig) -> AppResult<()> {
    if args.drivers.is_empty() {
        return Err(AppError::Usage("--drivers must be non-empty".into()));
    }
    let input = config.resolve(&args.input);
    let out_dir = config.resolve(&args.out);
    fs::create_dir_all(&out_dir).map_err(|e| data_err("io", e))?;
    let cfg = series_config(
        &args.window,
        args.k,
        args.mad_baseline,
        args.mad_min,
        args.broadcast,
        config,
    )?;
    let policy = missing_policy(&args.window, config)?;
    let mut manifest = RunManifest::new(
        "residuals",
        serde_json::json!({
            "drivers": args.drivers,
            "weights": args.weights,
            "window": cfg.window,
            "flags": cfg.flags,
            "broadcast": format!("{:?}", cfg.broadcast),
        }),
    );
    let table = load_table(&input, policy, &mut manifest)?;
    let constituents = default_constituents(&table, &args.drivers, &args.constituents);
    if constituents.is_empty() {
        return Err(AppError::Usage(
            "no constituent columns left after removing drivers".into(),
        ));
    }
    let ps = parse_weights(&args.weights, constituents.len())?;
    let rs = residual_series(&table, &cfg, &ps, &constituents, &args.drivers)?;

    let mut pairs = String::from("date,constituent,driver,value,flag\n");
    for p in &rs.points {
        for (i, cname) in constituents.iter().enumerate() {
            for (j, dname) in args.drivers.iter().enumerate() {
                pairs.push_str(&format!(
                    "{},{cname},{dname},{},{}\n",
                    p.date,
                    fmt_cell(p.per_pair.get(i, j)),
                    p.pair_flags[i][j],
                ));
            }
        }
    }
    let pairs_path = out_dir.join("pairs.csv");
    write_atomic(&pairs_path, pairs.as_bytes())?;
    manifest.record_output("pairs.csv");

    let mut agg =
        String::from("date,delta_aggregate,brownian_aggregate,realized_vol,ito_mismatch,flag\n");
    for p in &rs.points {
        agg.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.date,
            fmt_cell(p.delta_aggregate),
            fmt_cell(p.brownian_aggregate),
            fmt_cell(p.realized_vol),
            p.ito_mismatch.map(fmt_cell).unwrap_or_default(),
            p.flag,
        ));
    }
    let agg_path = out_dir.join("aggregates.csv");
    write_atomic(&agg_path, agg.as_bytes())?;
    manifest.record_output("aggregates.csv");

    if !rs.skipped.is_empty() {
        let mut skipped = String::from("date,reason\n");
        for (date, reason) in &rs.skipped {
            skipped.push_str(&format!("{date},{reason:?}\n"));
        }
        write_atomic(&out_dir.join("skipped.csv"), skipped.as_bytes())?;
        manifest.record_output("skipped.csv");
    }

    if args.revision_signal {
        let (signal, diags) = revision_signal(&rs, &RevisionPolicy::default())?;
        manifest.config["revision_signal"] = serde_json::json!({
            "signaled": signal,
            "diagnostics": diags,
        });
    }

    if let Some(system_out) = &args.export_system {
        let system_out = config.resolve(system_out);
        let stacked = stack_market_systems(&table, &cfg, &constituents, &args.drivers, None)?;
        write_system_json(&stacked, &system_out)?;
        manifest.record_output(&file_name(&system_out));
    }

    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

fn cmd_sum(args: SumArgs, config: &FileConfig) -> AppResult<()> {
    let input = config.resolve(&args.input);
    let input = if input.is_dir() {
        input.join("pairs.csv")
    } else {
        input
    };
    let out = config.resolve(&args.out);
    let from = parse_date(&args.from)?;
    let to = parse_date(&args.to)?;
    if to < from {
        return Err(AppError::Usage("--to is before --from".into()));
    }
    let mut manifest = RunManifest::new(
        "sum",
        serde_json::json!({ "from": args.from, "to": args.to }),
    );
    manifest.record_input(&input)?;
    let text = fs::read_to_string(&input).map_err(|e| data_err("io", e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut sums: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut used = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| data_err("table", e))?;
        let date = parse_date(record.get(0).unwrap_or(""))
            .map_err(|_| data_err("table", "bad date in pairs file"))?;
        if date < from || date > to {
            continue;
        }
        let key = (
            record.get(1).unwrap_or("").to_string(),
            record.get(2).unwrap_or("").to_string(),
        );
        if let Ok(v) = record.get(3).unwrap_or("").parse::<f64>() {
            *sums.entry(key).or_insert(0.0) += v;
            used += 1;
        }
    }
    if used == 0 {
        return Err(data_err("series", "no per-pair values in the period"));
    }
    let mut csv_out = String::from("constituent,driver,sum\n");
    let mut total = 0.0;
    for ((c, d), s) in &sums {
        csv_out.push_str(&format!("{c},{d},{s}\n"));
        total += s;
    }
    csv_out.push_str(&format!("TOTAL,,{total}\n"));
    write_atomic(&out, csv_out.as_bytes())?;
    manifest.record_output(&file_name(&out));
    manifest.write(&manifest_path(&out))?;
    Ok(())
}

fn cmd_select(args: SelectArgs, config: &FileConfig) -> AppResult<()> {
    if args.candidates.is_empty() {
        return Err(AppError::Usage("--candidates must be non-empty".into()));
    }
    let input = config.resolve(&args.input);
    let out = config.resolve(&args.out);
    let cfg = series_config(&args.window, None, None, None, None, config)?;
    let policy = missing_policy(&args.window, config)?;
    let mut manifest = RunManifest::new(
        "select",
        serde_json::json!({
            "candidates": args.candidates,
            "m": args.m,
            "mode": format!("{:?}", args.mode),
            "loss": format!("{:?}", args.loss),
            "window": cfg.window,
            "proxy_note": "selection minimizes the drift-deviation loss as a commonality proxy",
        }),
    );
    let table = load_table(&input, policy, &mut manifest)?;
    let constituents = default_constituents(&table, &args.candidates, &args.constituents);
    let ps = parse_weights(&args.weights, constituents.len())?;
    let problem = SelectionProblem {
        candidates: args.candidates.clone(),
        m: args.m,
        mode: match args.mode {
            ModeArg::Exhaustive => SearchMode::Exhaustive,
            ModeArg::Greedy => SearchMode::GreedyForward,
        },
        loss: match args.loss {
            LossArg::MeanAbsDelta => LossKind::MeanAbsDelta,
            LossArg::MeanSqDelta => LossKind::MeanSquaredDelta,
            LossArg::SumAbsPair => LossKind::SumAbsPerPair,
        },
        from: args.from.as_deref().map(parse_date).transpose()?,
        to: args.to.as_deref().map(parse_date).transpose()?,
    };
    let result = select(&problem, &table, &cfg, &ps, &constituents)?;
    let json = serde_json::to_string_pretty(&result)?;
    write_atomic(&out, json.as_bytes())?;
    manifest.record_output(&file_name(&out));
    manifest.write(&manifest_path(&out))?;
    Ok(())
}

/// Serialized stacked system.
#[derive(Debug, Serialize, Deserialize)]
struct SystemJson {
    rows: usize,
    cols: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn write_system_json(sys: &ImpliedSystem, path: &Path) -> AppResult<()> {
    let json = SystemJson {
        rows: sys.a.rows(),
        cols: sys.a.cols(),
        a: mat_rows(&sys.a),
        b: sys.b.clone(),
    };
    write_atomic(path, serde_json::to_string_pretty(&json)?.as_bytes())?;
    Ok(())
}

fn read_system_json(path: &Path) -> AppResult<ImpliedSystem> {
    let text = fs::read_to_string(path).map_err(|e| data_err("io", e))?;
    let json: SystemJson = serde_json::from_str(&text)?;
    if json.a.len() != json.rows || json.a.iter().any(|r| r.len() != json.cols) {
        return Err(data_err(
            "json",
            "system matrix shape disagrees with rows/cols",
        ));
    }
    if json.b.len() != json.rows {
        return Err(data_err("json", "system rhs length disagrees with rows"));
    }
    let a = Mat::from_rows(&json.a).map_err(|e| data_err("core", e))?;
    Ok(ImpliedSystem { a, b: json.b })
}

/// Assemble and stack implied systems from the last evaluable dates of a
/// market table.
fn stack_market_systems(
    table: &ReturnTable,
    cfg: &SeriesConfig,
    constituents: &[String],
    drivers: &[String],
    stack: Option<usize>,
) -> AppResult<ImpliedSystem> {
    let n = constituents.len();
    let m = drivers.len();
    let needed = stack.unwrap_or_else(|| n.div_ceil(m).max(1) + 1);
    let estimates = rolling_estimates(table, &cfg.window, constituents, drivers)?;
    let mut systems = Vec::new();
    for est in estimates.iter().rev() {
        if systems.len() >= needed {
            break;
        }
        let all_defined = est.u.iter().all(|v| v.is_finite())
            && est.d.iter().all(|v| v.is_finite())
            && (0..n).all(|i| (0..m).all(|j| est.rho.get(i, j).is_finite()));
        if !all_defined {
            continue;
        }
        let u: Vec<copula_pde_core::copula::Prob> = est
            .u
            .iter()
            .map(|&x| copula_pde_core::copula::Prob::new(x))
            .collect::<Result<_, _>>()
            .map_err(|e| data_err("core", e))?;
        let d =
            copula_pde_core::pi::DriverState::from_raw(&est.d).map_err(|e| data_err("core", e))?;
        let rho = copula_pde_core::pi::RhoMatrix::new(est.rho.clone())
            .map_err(|e| data_err("core", e))?;
        let sys = PiSystem::build(&u, &d, &rho).map_err(|e| data_err("core", e))?;
        let vp = VolParams::new(
            0.0, // sigma_p is not part of the weight-factored system rows
            vec![0.0; n],
            est.sigma_d.clone(),
            est.mu_d.clone(),
            vec![0.0; n * m],
            vec![0.0; n * m],
        )
        .map_err(|e| data_err("core", e))?;
        systems.push(assemble_implied_system(&sys, &d, &vp).map_err(|e| data_err("core", e))?);
    }
    if systems.is_empty() {
        return Err(data_err("series", "no fully-defined dates to stack"));
    }
    systems.reverse();
    ImpliedSystem::stack(&systems).map_err(|e| data_err("core", e))
}

#[derive(Debug, Serialize)]
struct ImpliedReport {
    sigma_p_w: Vec<f64>,
    rank: usize,
    rank_deficient: bool,
    residual_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    implied_variances: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    implied_weights: Option<Vec<f64>>,
}

fn cmd_implied(args: ImpliedArgs, config: &FileConfig) -> AppResult<()> {
    let out = config.resolve(&args.out);
    if args.weights.is_some() == !args.variances.is_empty() {
        return Err(AppError::Usage(
            "pass exactly one of --weights (implied variances) or --variances (implied weights)"
                .into(),
        ));
    }
    let mut manifest = RunManifest::new(
        "implied",
        serde_json::json!({
            "mode": if args.weights.is_some() { "variances-from-weights" } else { "weights-from-variances" },
            "stack": args.stack,
        }),
    );
    let system = match (&args.system, &args.input) {
        (Some(path), None) => {
            let path = config.resolve(path);
            manifest.record_input(&path)?;
            read_system_json(&path)?
        }
        (None, Some(input)) => {
            if args.drivers.is_empty() {
                return Err(AppError::Usage("--drivers must be non-empty".into()));
            }
            let input = config.resolve(input);
            let cfg = series_config(&args.window, None, None, None, None, config)?;
            let policy = missing_policy(&args.window, config)?;
            let table = load_table(&input, policy, &mut manifest)?;
            let constituents = default_constituents(&table, &args.drivers, &args.constituents);
            stack_market_systems(&table, &cfg, &constituents, &args.drivers, args.stack)?
        }
        _ => {
            return Err(AppError::Usage(
                "pass exactly one of --in (market CSV) or --system (system JSON)".into(),
            ))
        }
    };
    let solution = system.solve().map_err(|e| data_err("core", e))?;
    let n = solution.sigma_p_w.len();
    let mut report = ImpliedReport {
        sigma_p_w: solution.sigma_p_w.clone(),
        rank: solution.rank,
        rank_deficient: solution.rank_deficient,
        residual_norm: solution.residual_norm,
        implied_variances: None,
        implied_weights: None,
    };
    if let Some(weights) = &args.weights {
        let ps = parse_weights(weights, n)?;
        report.implied_variances = Some(
            solution
                .implied_variances(ps.weights())
                .map_err(|e| data_err("core", e))?,
        );
    } else {
        if args.variances.len() != n {
            return Err(AppError::Usage(format!(
                "{} variances for {} unknowns",
                args.variances.len(),
                n
            )));
        }
        report.implied_weights = Some(
            solution
                .implied_weights(&args.variances)
                .map_err(|e| data_err("core", e))?,
        );
    }
    write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    manifest.record_output(&file_name(&out));
    manifest.write(&manifest_path(&out))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SimulateCheckReport {
    dt_levels: Vec<f64>,
    errors: Vec<f64>,
    halving_ratios: Vec<f64>,
    log_log_slope: f64,
}

fn cmd_simulate_check(args: SimulateCheckArgs, config: &FileConfig) -> AppResult<()> {
    let out = config.resolve(&args.out);
    if args.dt.len() < 2 {
        return Err(AppError::Usage("need at least two dt levels".into()));
    }
    let mut errors = Vec::new();
    for &dt in &args.dt {
        let steps = (args.horizon / dt).round() as usize;
        if steps < 10 {
            return Err(AppError::Usage(format!(
                "dt {dt} gives only {steps} steps over horizon {}",
                args.horizon
            )));
        }
        let (params, vp, ps) = consistency_check_setup(dt, steps, args.seed);
        let set = simulate(&params, args.paths).map_err(|e| data_err("core", e))?;
        let err = copula_pde_core::residuals::ito_consistency(&ps, &set, &vp)
            .map_err(|e| data_err("core", e))?;
        errors.push(err);
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let slope = {
        let xs: Vec<f64> = args.dt.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        num / den
    };
    let report = SimulateCheckReport {
        dt_levels: args.dt.clone(),
        errors,
        halving_ratios: ratios,
        log_log_slope: slope,
    };
    write_atomic(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    let mut manifest = RunManifest::new(
        "simulate-check",
        serde_json::json!({
            "dt": args.dt, "horizon": args.horizon, "paths": args.paths, "seed": args.seed,
        }),
    );
    manifest.record_output(&file_name(&out));
    manifest.write(&manifest_path(&out))?;
    Ok(())
}
