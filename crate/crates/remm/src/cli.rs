//! Command-line surface. Every command reads its inputs, writes CSV or JSON
//! to `--out` (standard output when absent) and reports failures through
//! [`CliError`] exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use remm_core::{
    aalen_johansen_marginal_mean, fit_npmle_weighted, ghosh_lin_fit, ipc_weights, km_censoring, nelson_aalen_pseudo,
    predict_with_covariance, pseudo_risk_size, sandwich, simulate_dataset, BandScale, LinkFunction, SolverOptions,
};

use crate::config::load_config;
use crate::dataset_csv::{parse_profile, read_dataset, write_dataset};
use crate::error::{CliError, CliResult};
use crate::fit_json::{build_id, FitJson};
use crate::select::{parse_grid, parse_times, run_select, write_select};
use crate::study::{run_study, write_summary};

/// Largest Ghosh–Lin vs NPMLE difference tolerated by `fit --ghosh-lin-check`.
pub const GHOSH_LIN_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "remm", version = version(), about = "Marginal means of recurrent events with a competing terminal event")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn version() -> &'static str {
    static VERSION: std::sync::OnceLock<String> = std::sync::OnceLock::new();
    VERSION.get_or_init(|| build_id().trim_start_matches("remm ").to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weighted NPMLE with sandwich standard errors, written as JSON.
    Fit(FitArgs),
    /// Simulates a dataset from a TOML config.
    Simulate(SimulateArgs),
    /// Marginal mean curve for a covariate profile from a saved fit.
    Predict(PredictArgs),
    /// Fits a grid of links and reports log-likelihood and AIC.
    Select(SelectArgs),
    /// Nonparametric marginal means and the censoring survival.
    Npe(NpeArgs),
    /// Monte Carlo study of bias, SD, standard errors and coverage.
    McStudy(McArgs),
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Gradient tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Iteration cap of the quasi-Newton phase.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
}

impl SolverArgs {
    pub fn options(&self) -> CliResult<SolverOptions> {
        if !(self.tol > 0.0) {
            return Err(CliError::Validation(format!("--tol must be positive, got {}", self.tol)));
        }
        Ok(SolverOptions { tol: self.tol, max_iter: self.max_iter, ..SolverOptions::default() })
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Counting-process CSV `id,start,stop,status,z1..zd`.
    #[arg(long)]
    pub data: PathBuf,
    /// Study end; defaults to the largest `stop`.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `boxcox:<rho>` or `log:<r>`.
    #[arg(long, default_value = "boxcox:1")]
    pub link: String,
    /// Times at which to report `Λ̂₀(t)` with standard errors, `a,b,c` or `from:to:step`.
    #[arg(long)]
    pub var_times: Option<String>,
    /// Refit with the Ghosh–Lin estimating equation and fail on disagreement (identity link only).
    #[arg(long)]
    pub ghosh_lin_check: bool,
    /// Skip the variance computation.
    #[arg(long)]
    pub no_variance: bool,
    /// Leave the covariance matrix out of the JSON.
    #[arg(long)]
    pub no_covariance: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML config, or the name of a bundled preset such as `scenario_bc_1`.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config sample size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// CSV `start,z1..zd` giving the covariate path.
    #[arg(long)]
    pub profile: PathBuf,
    /// `from:to:step` or `a,b,c`; defaults to the jump times.
    #[arg(long)]
    pub times: Option<String>,
    /// Log-transformed bands instead of linear ones.
    #[arg(long)]
    pub log_band: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Links such as `boxcox:0.25..1.5:0.25,log:0.5,log:1`.
    #[arg(long)]
    pub grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NpeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `time,lambda_pseudo,lambda_aj` at the recurrence times.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `time,gc,pseudo_risk` at the recurrence times.
    #[arg(long)]
    pub censoring_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// TOML config, or the name of a bundled preset.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "boxcox:1")]
    pub fit_link: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    match path {
        Some(p) => Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?))),
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn parse_link(s: &str) -> CliResult<LinkFunction> {
    s.parse().map_err(|e| CliError::Validation(format!("link '{s}': {e}")))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Predict(a) => predict(a),
        Command::Select(a) => select(a),
        Command::Npe(a) => npe(a),
        Command::McStudy(a) => mc_study(a),
    }
}

fn fit(a: FitArgs) -> CliResult<()> {
    let link = parse_link(&a.link)?;
    let opts = a.solver.options()?;
    let var_times = a.var_times.as_deref().map(parse_times).transpose()?.unwrap_or_default();
    if a.ghosh_lin_check && !link.is_identity() {
        return Err(CliError::Validation("--ghosh-lin-check needs the identity link boxcox:1".into()));
    }
    let ds = read_dataset(&a.data.data, a.data.tau)?;
    if let Some(&t) = var_times.iter().find(|t| !(**t >= 0.0 && **t <= ds.tau())) {
        return Err(CliError::Validation(format!("--var-times {t} outside [0, {}]", ds.tau())));
    }
    for w in ds.warnings() {
        log::warn!("{w}");
    }
    let gc = km_censoring(&ds)?;
    let wc = ipc_weights(&ds, &gc)?;
    let result = fit_npmle_weighted(&ds, &wc, &link, &opts)?;
    let vr = if a.no_variance { None } else { Some(sandwich(&result, &ds, &wc, &gc, &link)?) };
    if let Some(vr) = &vr {
        for w in &vr.warnings {
            log::warn!("{w}");
        }
    }
    let json = FitJson::new(&result, vr.as_ref(), &var_times, !a.no_covariance);
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &json).map_err(|e| CliError::io("<output>", e.into()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io("<output>", e))?;

    if !result.converged {
        return Err(CliError::Convergence(format!("fit did not converge: gradient norm {:e}", result.gradient_norm)));
    }
    if a.ghosh_lin_check {
        let gl = ghosh_lin_fit(&ds, &wc)?;
        let diff = gl.iter().zip(&result.beta_hat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if !(diff < GHOSH_LIN_TOL) {
            return Err(CliError::Convergence(format!("Ghosh-Lin and NPMLE differ by {diff:e}")));
        }
        log::info!("Ghosh-Lin check passed: max difference {diff:e}");
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    let ds = simulate_dataset(&cfg)?;
    write_dataset(&ds, output(a.out.as_deref())?)
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.fit).map_err(|e| CliError::io(&a.fit, e))?;
    let json: FitJson = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", a.fit.display())))?;
    let fit = json.to_fit()?;
    let profile = parse_profile(open(&a.profile)?)?;
    let times = match &a.times {
        Some(s) => parse_times(s)?,
        None => fit.jump_times.clone(),
    };
    let scale = if a.log_band { BandScale::Log } else { BandScale::Linear };
    let curve = match json.covariance_matrix()? {
        Some(cov) => predict_with_covariance(&fit, &cov, &profile, &times, scale)?,
        None => {
            log::warn!("fit file carries no covariance; standard errors are reported as 0");
            remm_core::predict_marginal_mean(&fit, None, &profile, &times, scale)?
        }
    };
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let err = |e: csv::Error| CliError::Validation(e.to_string());
    w.write_record(["time", "mean", "se", "lo", "hi"]).map_err(err)?;
    for j in 0..curve.times.len() {
        w.write_record([curve.times[j], curve.mean[j], curve.se[j], curve.ci_low[j], curve.ci_high[j]].map(|v| v.to_string()))
            .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))
}

fn select(a: SelectArgs) -> CliResult<()> {
    let grid = parse_grid(&a.grid)?;
    let opts = a.solver.options()?;
    let ds = read_dataset(&a.data.data, a.data.tau)?;
    let rows = run_select(&ds, &grid, &opts)?;
    for r in &rows {
        if let Err(e) = &r.outcome {
            log::warn!("{}: {e}", r.link);
        }
    }
    write_select(&rows, ds.dim(), output(a.out.as_deref())?)
}

fn npe(a: NpeArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data.data, a.data.tau)?;
    let gc = km_censoring(&ds)?;
    let wc = ipc_weights(&ds, &gc)?;
    let pseudo = nelson_aalen_pseudo(&ds, &wc)?;
    let aj = aalen_johansen_marginal_mean(&ds)?;
    let err = |e: csv::Error| CliError::Validation(e.to_string());
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["time", "lambda_pseudo", "lambda_aj"]).map_err(err)?;
    for &t in ds.recurrent_grid() {
        w.write_record([t, pseudo.value_at(t), aj.value_at(t)].map(|v| v.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))?;
    if let Some(path) = &a.censoring_out {
        let mut w = csv::Writer::from_writer(output(Some(path))?);
        w.write_record(["time", "gc", "pseudo_risk"]).map_err(err)?;
        for &t in ds.recurrent_grid() {
            w.write_record([t, gc.value_at(t), pseudo_risk_size(&wc, t)].map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn mc_study(a: McArgs) -> CliResult<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let link = parse_link(&a.fit_link)?;
    let opts = a.solver.options()?;
    let summary = match a.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Validation(e.to_string()))?
            .install(|| run_study(&cfg, &link, &opts, a.reps))?,
        None => run_study(&cfg, &link, &opts, a.reps)?,
    };
    if summary.failures > 0 {
        log::warn!("{} of {} replicates failed", summary.failures, summary.reps);
    }
    write_summary(&summary, output(a.out.as_deref())?)
}
