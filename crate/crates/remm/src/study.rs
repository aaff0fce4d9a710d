//! Parallel Monte Carlo runs and their CSV summary.

use std::io::Write;

use rayon::prelude::*;
use remm_core::mc::{aggregate, run_replicate, targets};
use remm_core::{LinkFunction, McSummary, SimulationConfig, SolverOptions};

use crate::error::{CliError, CliResult};

/// Runs `reps` replicates on the rayon pool. Results are collected in
/// replicate order, so the summary equals the sequential one.
pub fn run_study(cfg: &SimulationConfig, link: &LinkFunction, opts: &SolverOptions, reps: usize) -> CliResult<McSummary> {
    if reps == 0 {
        return Err(CliError::Validation("reps must be at least 1".into()));
    }
    cfg.validate()?;
    let outcomes: Vec<_> = (0..reps as u64).into_par_iter().map(|r| run_replicate(cfg, link, opts, r)).collect();
    for (r, o) in outcomes.iter().enumerate() {
        match o {
            Err(e) => log::warn!("replicate {r} failed: {e}"),
            Ok(o) if !o.converged => log::warn!("replicate {r} did not converge"),
            _ => {}
        }
    }
    Ok(aggregate(&targets(cfg)?, &outcomes)?)
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "name",
    "truth",
    "mean_est",
    "bias",
    "bias_pct",
    "sd",
    "mean_se_fisher",
    "mean_se_sandwich",
    "cp_fisher",
    "cp_sandwich",
    "reps",
    "failures",
];

/// One row per tracked quantity; an absent SD is written as an empty field.
pub fn write_summary<W: Write>(s: &McSummary, sink: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| CliError::Validation(e.to_string());
    w.write_record(SUMMARY_HEADER).map_err(io)?;
    for r in &s.rows {
        w.write_record([
            r.name.clone(),
            r.truth.to_string(),
            r.mean_est.to_string(),
            r.bias.to_string(),
            r.bias_pct.to_string(),
            r.sd.map(|v| v.to_string()).unwrap_or_default(),
            r.mean_se_fisher.to_string(),
            r.mean_se_sandwich.to_string(),
            r.cp_fisher.to_string(),
            r.cp_sandwich.to_string(),
            s.reps.to_string(),
            s.failures.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))
}
