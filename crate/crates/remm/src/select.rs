//! Link grids and AIC-based selection.

use std::io::Write;

use rayon::prelude::*;
use remm_core::{fit_npmle_weighted, ipc_weights, km_censoring, Dataset, LinkFamily, LinkFunction, SolverOptions};

use crate::error::{CliError, CliResult};

/// Parses a comma-separated grid. Each item is a link (`boxcox:0.5`) or a
/// range `family:from..to:step`, e.g. `boxcox:0.25..1.5:0.25`.
pub fn parse_grid(spec: &str) -> CliResult<Vec<LinkFunction>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((family, range)) = item.split_once(':').filter(|(_, r)| r.contains("..")) {
            let bad = || CliError::Validation(format!("bad grid range '{item}'"));
            let (from, rest) = range.split_once("..").ok_or_else(bad)?;
            let (to, step) = rest.split_once(':').ok_or_else(bad)?;
            let (from, to, step): (f64, f64, f64) =
                (from.parse().map_err(|_| bad())?, to.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
            if !(step > 0.0) || to < from {
                return Err(bad());
            }
            let count = ((to - from) / step + 1e-9).floor() as usize;
            for j in 0..=count {
                out.push(format!("{family}:{}", from + j as f64 * step).parse()?);
            }
        } else {
            out.push(item.parse()?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Validation("link grid is empty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectRow {
    pub link: LinkFunction,
    pub outcome: Result<SelectFit, String>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectFit {
    pub loglik: f64,
    pub aic: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
}

/// Fits every link on the grid in parallel; failures are kept per row.
/// The converged fit with the largest log-likelihood is flagged.
pub fn run_select(ds: &Dataset, grid: &[LinkFunction], opts: &SolverOptions) -> CliResult<Vec<SelectRow>> {
    let gc = km_censoring(ds)?;
    let wc = ipc_weights(ds, &gc)?;
    let mut rows: Vec<SelectRow> = grid
        .par_iter()
        .map(|link| {
            let outcome = fit_npmle_weighted(ds, &wc, link, opts)
                .map(|f| SelectFit { loglik: f.loglik, aic: f.aic(), beta: f.beta_hat.clone(), converged: f.converged })
                .map_err(|e| e.to_string());
            SelectRow { link: *link, outcome, best: false }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.outcome.as_ref().ok().filter(|f| f.converged).map(|f| (i, f.loglik)))
        .fold(None, |best: Option<(usize, f64)>, (i, l)| match best {
            Some((_, b)) if b >= l => best,
            _ => Some((i, l)),
        });
    if let Some((i, _)) = best {
        rows[i].best = true;
    }
    Ok(rows)
}

/// `family,param,loglik,aic,converged,best,beta1..betad,error`.
pub fn write_select<W: Write>(rows: &[SelectRow], d: usize, sink: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(sink);
    let err = |e: csv::Error| CliError::Validation(e.to_string());
    let mut header: Vec<String> = ["link", "param", "loglik", "aic", "converged", "best"].map(String::from).to_vec();
    header.extend((1..=d).map(|j| format!("beta{j}")));
    header.push("error".into());
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let family = match r.link.family() {
            LinkFamily::BoxCox => "boxcox",
            LinkFamily::Logarithmic => "log",
        };
        let mut rec = vec![family.to_string(), r.link.param().to_string()];
        match &r.outcome {
            Ok(f) => {
                rec.extend([f.loglik.to_string(), f.aic.to_string(), f.converged.to_string(), r.best.to_string()]);
                rec.extend(f.beta.iter().map(|b| b.to_string()));
                rec.push(String::new());
            }
            Err(e) => {
                rec.extend([String::new(), String::new(), "false".into(), "false".into()]);
                rec.extend((0..d).map(|_| String::new()));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("<output>", e))
}

/// Times as `a,b,c` or `from:to:step` (inclusive of `to` when it lands on
/// the grid).
pub fn parse_times(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Validation(format!("bad time spec '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    let times: Vec<f64> = if parts.len() == 3 {
        let (from, to, step): (f64, f64, f64) =
            (parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?, parts[2].parse().map_err(|_| bad())?);
        if !(step > 0.0) || to < from {
            return Err(bad());
        }
        let count = ((to - from) / step + 1e-9).floor() as usize;
        (0..=count).map(|j| from + j as f64 * step).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
        return Err(bad());
    }
    Ok(times)
}
