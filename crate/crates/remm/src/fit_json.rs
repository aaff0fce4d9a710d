//! JSON form of a fit, optionally with standard errors and the sandwich
//! covariance used by `predict`.

use remm_core::linalg::Matrix;
use remm_core::{FitResult, LinkFunction, VarianceResult};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Package version and build identifier, stamped into every JSON output.
pub fn build_id() -> String {
    format!("remm {} ({})", env!("CARGO_PKG_VERSION"), option_env!("REMM_BUILD_ID").unwrap_or("dev"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub time: f64,
    pub lambda0: f64,
    pub se_fisher: f64,
    pub se_sandwich: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitJson {
    pub version: String,
    pub link: String,
    pub beta: Vec<f64>,
    /// Sandwich standard errors of `beta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_fisher: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_sandwich: Option<Vec<f64>>,
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub n: usize,
    pub k: usize,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub var_times: Vec<BaselineEntry>,
    /// Row-major sandwich covariance of `(beta, jump_sizes)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitJson {
    pub fn new(fit: &FitResult, vr: Option<&VarianceResult>, var_times: &[f64], with_covariance: bool) -> Self {
        let var_times = vr
            .map(|vr| {
                var_times
                    .iter()
                    .map(|&t| {
                        let (s, f) = vr.baseline_se(t);
                        BaselineEntry { time: t, lambda0: fit.cumulative_baseline(t), se_fisher: f, se_sandwich: s }
                    })
                    .collect()
            })
            .unwrap_or_default();
        let covariance = vr.filter(|_| with_covariance).map(|vr| {
            let c = vr.covariance();
            (0..c.rows()).map(|i| c.row(i).to_vec()).collect()
        });
        Self {
            version: build_id(),
            link: fit.link.to_string(),
            beta: fit.beta_hat.clone(),
            se: vr.map(|v| v.beta_se.clone()),
            se_fisher: vr.map(|v| v.fisher_only_se.clone()),
            se_sandwich: vr.map(|v| v.beta_se.clone()),
            jump_times: fit.jump_times.clone(),
            jump_sizes: fit.jump_sizes.clone(),
            loglik: fit.loglik,
            aic: fit.aic(),
            converged: fit.converged,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            n: fit.n,
            k: fit.jump_times.len(),
            tau: fit.tau,
            var_times,
            covariance,
            warnings: vr.map(|v| v.warnings.clone()).unwrap_or_default(),
        }
    }

    pub fn to_fit(&self) -> CliResult<FitResult> {
        let link: LinkFunction = self.link.parse()?;
        if self.jump_times.len() != self.jump_sizes.len() {
            return Err(CliError::Validation(format!(
                "fit file has {} jump times but {} jump sizes",
                self.jump_times.len(),
                self.jump_sizes.len()
            )));
        }
        Ok(FitResult {
            beta_hat: self.beta.clone(),
            jump_times: self.jump_times.clone(),
            jump_sizes: self.jump_sizes.clone(),
            loglik: self.loglik,
            iterations: self.iterations,
            converged: self.converged,
            gradient_norm: self.gradient_norm,
            link,
            n: self.n,
            tau: self.tau,
        })
    }

    pub fn covariance_matrix(&self) -> CliResult<Option<Matrix>> {
        let Some(rows) = &self.covariance else { return Ok(None) };
        let p = self.beta.len() + self.jump_sizes.len();
        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
            return Err(CliError::Validation(format!("covariance must be {p} x {p}")));
        }
        Ok(Some(Matrix::from_rows(p, p, rows.concat())))
    }
}
