//! One Monte Carlo replicate and the aggregation of many into
//! bias / SD / SE / coverage rows. Scheduling lives with the caller.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::censoring::{ipc_weights, km_censoring};
use crate::error::{Error, Result};
use crate::estimator::{fit_npmle_weighted, SolverOptions};
use crate::link::LinkFunction;
use crate::marginal::Z_975;
use crate::math::sqrt;
use crate::simulation::{gompertz_cum, simulate_dataset, SimulationConfig};
use crate::variance::sandwich;

/// Estimates of every tracked quantity from one replicate, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub estimates: Vec<f64>,
    pub se_fisher: Vec<f64>,
    pub se_sandwich: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRow {
    pub name: String,
    pub truth: f64,
    pub mean_est: f64,
    pub bias: f64,
    /// `100·bias/truth`; NaN when the truth is zero.
    pub bias_pct: f64,
    /// Absent with a single replicate.
    pub sd: Option<f64>,
    pub mean_se_fisher: f64,
    pub mean_se_sandwich: f64,
    pub cp_fisher: f64,
    pub cp_sandwich: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub rows: Vec<McRow>,
    pub reps: usize,
    pub failures: usize,
}

impl McSummary {
    pub fn row(&self, name: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn successes(&self) -> usize {
        self.reps - self.failures
    }
}

/// Names and truths of the tracked quantities: each `β_j`, then `Λ₀` at
/// `τ/4`, `τ/2` and `τ`.
pub fn targets(cfg: &SimulationConfig) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = cfg.beta.iter().enumerate().map(|(j, b)| (format!("beta{}", j + 1), *b)).collect();
    for (label, frac) in [("A(tau/4)", 0.25), ("A(tau/2)", 0.5), ("A(tau)", 1.0)] {
        out.push((String::from(label), gompertz_cum(cfg.gamma1, cfg.gamma2, frac * cfg.tau)?));
    }
    Ok(out)
}

/// Seed of replicate `rep`: word `2 rep` of the ChaCha8 stream keyed by
/// `seed`, so nearby study seeds do not share replicates.
pub fn replicate_seed(seed: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * u128::from(rep));
    rng.next_u64()
}

/// Simulates with `replicate_seed(cfg.seed, rep)`, fits `link` and computes both standard
/// errors. A fit that stops short of the gradient tolerance is returned
/// with `converged = false`.
pub fn run_replicate(cfg: &SimulationConfig, link: &LinkFunction, opts: &SolverOptions, rep: u64) -> Result<ReplicateOutcome> {
    let mut c = cfg.clone();
    c.seed = replicate_seed(cfg.seed, rep);
    let ds = simulate_dataset(&c)?;
    let gc = km_censoring(&ds)?;
    let wc = ipc_weights(&ds, &gc)?;
    let fit = fit_npmle_weighted(&ds, &wc, link, opts)?;
    let vr = sandwich(&fit, &ds, &wc, &gc, link)?;
    let mut estimates = fit.beta_hat.clone();
    let mut se_fisher = vr.fisher_only_se.clone();
    let mut se_sandwich = vr.beta_se.clone();
    for frac in [0.25, 0.5, 1.0] {
        let t = frac * cfg.tau;
        estimates.push(fit.cumulative_baseline(t));
        let (s, f) = vr.baseline_se(t);
        se_sandwich.push(s);
        se_fisher.push(f);
    }
    Ok(ReplicateOutcome { estimates, se_fisher, se_sandwich, converged: fit.converged })
}

/// Aggregates replicate outcomes in the given order. Errors and
/// non-converged fits count as failures and are left out.
pub fn aggregate(targets: &[(String, f64)], outcomes: &[Result<ReplicateOutcome>]) -> Result<McSummary> {
    let ok: Vec<&ReplicateOutcome> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .filter(|o| o.converged && o.estimates.len() == targets.len())
        .collect();
    if ok.is_empty() {
        return Err(Error::AllReplicatesFailed(outcomes.len()));
    }
    let m = ok.len() as f64;
    let rows = targets
        .iter()
        .enumerate()
        .map(|(j, (name, truth))| {
            let mean_est = ok.iter().map(|o| o.estimates[j]).sum::<f64>() / m;
            let sd = (ok.len() > 1).then(|| sqrt(ok.iter().map(|o| (o.estimates[j] - mean_est).powi(2)).sum::<f64>() / (m - 1.0)));
            let covered = |se: &dyn Fn(&ReplicateOutcome) -> f64| {
                ok.iter().filter(|o| (o.estimates[j] - truth).abs() <= Z_975 * se(o)).count() as f64 / m
            };
            let bias = mean_est - truth;
            McRow {
                name: name.clone(),
                truth: *truth,
                mean_est,
                bias,
                bias_pct: if *truth == 0.0 { f64::NAN } else { 100.0 * bias / truth },
                sd,
                mean_se_fisher: ok.iter().map(|o| o.se_fisher[j]).sum::<f64>() / m,
                mean_se_sandwich: ok.iter().map(|o| o.se_sandwich[j]).sum::<f64>() / m,
                cp_fisher: covered(&|o| o.se_fisher[j]),
                cp_sandwich: covered(&|o| o.se_sandwich[j]),
            }
        })
        .collect();
    Ok(McSummary { rows, reps: outcomes.len(), failures: outcomes.len() - ok.len() })
}

/// Sequential study; the `remm` crate runs replicates in parallel and
/// produces the same summary.
pub fn run_mc_study(cfg: &SimulationConfig, link: &LinkFunction, opts: &SolverOptions, reps: usize) -> Result<McSummary> {
    if reps == 0 {
        return Err(Error::InvalidArgument(String::from("reps must be at least 1")));
    }
    let outcomes: Vec<_> = (0..reps as u64).map(|r| run_replicate(cfg, link, opts, r)).collect();
    aggregate(&targets(cfg)?, &outcomes)
}
