//! Sandwich variance for `(β, λ)` in raw jump-size coordinates.
//!
//! The bread is the observed information (negated Hessian). The meat is
//! built from per-subject terms `η̂_i + κ̂_i`: `η̂_i` is subject `i`'s score of
//! the discretized likelihood and `κ̂_i` carries the variability of the
//! estimated censoring distribution through the censoring martingale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::censoring::{follow_up, is_censored, CensoringSurvival, WeightContext};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::likelihood::{evaluate, subject_scores, to_raw_coordinates};
use crate::linalg::{Cholesky, Matrix};
use crate::link::LinkFunction;
use crate::math::{exp, sqrt};

/// Condition numbers above this trigger a warning.
pub const CONDITION_WARNING: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct VarianceResult {
    /// Observed information summed over subjects, raw coordinates.
    pub fisher: Matrix,
    pub fisher_inverse: Matrix,
    /// Rows `η̂_i + κ̂_i`.
    pub influence: Matrix,
    pub beta_se: Vec<f64>,
    pub fisher_only_se: Vec<f64>,
    pub jump_times: Vec<f64>,
    pub d: usize,
    pub warnings: Vec<String>,
}

impl VarianceResult {
    pub fn n(&self) -> usize {
        self.influence.rows()
    }

    /// `n⁻¹ Σ_i (η̂_i + κ̂_i)^{⊗2}`.
    pub fn middle(&self) -> Matrix {
        let p = self.influence.cols();
        let mut m = Matrix::zeros(p, p);
        for i in 0..self.n() {
            let row = self.influence.row(i);
            m.add_outer(1.0, row, row);
        }
        m.scale(1.0 / self.n().max(1) as f64);
        m
    }

    /// Full sandwich covariance of the estimator. Dense and `O(p³)`; the
    /// functional forms below avoid building it.
    pub fn covariance(&self) -> Matrix {
        let v = self.influence.matmul(&self.fisher_inverse);
        let mut out = Matrix::zeros(v.cols(), v.cols());
        for i in 0..v.rows() {
            let row = v.row(i);
            out.add_outer(1.0, row, row);
        }
        out
    }

    /// `(sandwich, inverse-information)` variances of `hᵀθ̂` for a
    /// coefficient vector over `(β, λ)`.
    pub fn quadratic(&self, h: &[f64]) -> Result<(f64, f64)> {
        let p = self.fisher.rows();
        if h.len() != p {
            return Err(Error::DimensionMismatch { expected: p, actual: h.len() });
        }
        let v = self.fisher_inverse.mul_vec(h);
        let sandwich = (0..self.n())
            .map(|i| {
                let s: f64 = self.influence.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
                s * s
            })
            .sum();
        let fisher = h.iter().zip(&v).map(|(a, b)| a * b).sum();
        Ok((sandwich, fisher))
    }

    /// Sandwich covariance of `hᵀθ̂` and `gᵀθ̂`.
    pub fn bilinear(&self, h: &[f64], g: &[f64]) -> Result<f64> {
        let p = self.fisher.rows();
        if h.len() != p || g.len() != p {
            return Err(Error::DimensionMismatch { expected: p, actual: if h.len() != p { h.len() } else { g.len() } });
        }
        let vh = self.fisher_inverse.mul_vec(h);
        let vg = self.fisher_inverse.mul_vec(g);
        Ok((0..self.n())
            .map(|i| {
                let row = self.influence.row(i);
                let a: f64 = row.iter().zip(&vh).map(|(x, y)| x * y).sum();
                let b: f64 = row.iter().zip(&vg).map(|(x, y)| x * y).sum();
                a * b
            })
            .sum())
    }

    /// Coefficient vector of `h1ᵀβ + Σ_k h2_k λ_k`.
    pub fn encode(&self, h1: &[f64], h2: &[f64]) -> Result<Vec<f64>> {
        if h1.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, actual: h1.len() });
        }
        if h2.len() != self.jump_times.len() {
            return Err(Error::DimensionMismatch { expected: self.jump_times.len(), actual: h2.len() });
        }
        let mut h = h1.to_vec();
        h.extend_from_slice(h2);
        Ok(h)
    }

    /// Coefficients of `Λ̂₀(t)`: `h2_k = 1{t_k ≤ t}`.
    pub fn baseline_functional(&self, t: f64) -> Vec<f64> {
        let mut h = vec![0.0; self.d];
        h.extend(self.jump_times.iter().map(|s| if *s <= t { 1.0 } else { 0.0 }));
        h
    }

    /// Sandwich and inverse-information standard errors of `Λ̂₀(t)`.
    pub fn baseline_se(&self, t: f64) -> (f64, f64) {
        let (s, f) = self.quadratic(&self.baseline_functional(t)).unwrap_or((f64::NAN, f64::NAN));
        (sqrt(s.max(0.0)), sqrt(f.max(0.0)))
    }
}

/// Sandwich variance of `h1ᵀβ̂ + Σ_k h2_k λ̂_k`.
pub fn functional_variance(vr: &VarianceResult, h1: &[f64], h2: &[f64]) -> Result<f64> {
    Ok(vr.quadratic(&vr.encode(h1, h2)?)?.0)
}

/// Sandwich covariance of two functionals.
pub fn functional_covariance(vr: &VarianceResult, h: (&[f64], &[f64]), g: (&[f64], &[f64])) -> Result<f64> {
    vr.bilinear(&vr.encode(h.0, h.1)?, &vr.encode(g.0, g.1)?)
}

/// Per-subject scores `η̂_i` in raw coordinates, one row per subject.
pub fn eta_components(fit: &FitResult, ds: &Dataset, wc: &WeightContext, link: &LinkFunction) -> Result<Matrix> {
    subject_scores(&fit.params(), ds, wc, link)
}

/// Censoring-martingale terms
/// `κ̂_j = Σ_u Q(u)/R(u) · [1{j censored at u} − 1{X_j ≥ u} c(u)/R(u)]`
/// over observed censoring times `u`, where
/// `Q(u) = Σ_{i: D_i ≤ u} Σ_{t_k > u} w*_i(t_k) ∂_θ[a_ik G′(H_i(t_k))]`.
pub fn kappa_components(
    fit: &FitResult,
    ds: &Dataset,
    wc: &WeightContext,
    gc: &CensoringSurvival,
    link: &LinkFunction,
) -> Result<Matrix> {
    let d = ds.dim();
    let k = ds.k();
    let p = d + k;
    let n = ds.n();
    let mut out = Matrix::zeros(n, p);
    let terminal: Vec<usize> = (0..n).filter(|&i| wc.has_terminal(i)).collect();
    if terminal.is_empty() || gc.jump_times.is_empty() {
        return Ok(out);
    }
    let grid = ds.recurrent_grid();
    let lambda = &fit.jump_sizes;
    let beta = &fit.beta_hat;

    // Q(u) for every censoring time u.
    let nu = gc.jump_times.len();
    let mut q = Matrix::zeros(nu, p);
    let mut lp = vec![0.0; k];
    let mut e = vec![0.0; k];
    let mut c1 = vec![0.0; k];
    let mut c2 = vec![0.0; k];
    let mut hz = vec![0.0; k * d];
    let mut z = vec![0.0; k * d];
    for &i in &terminal {
        let s = &ds.subjects()[i];
        let dtime = s.terminal_time.unwrap_or(f64::INFINITY);
        ds.linear_predictor_on_grid(i, beta, &mut lp);
        let mut cum = 0.0;
        let mut acc = vec![0.0; d];
        for m in 0..k {
            e[m] = exp(lp[m]);
            let a = e[m] * lambda[m];
            cum += a;
            let zm = ds.covariates_on_grid(i, m);
            z[m * d..(m + 1) * d].copy_from_slice(zm);
            for c in 0..d {
                acc[c] += a * zm[c];
            }
            hz[m * d..(m + 1) * d].copy_from_slice(&acc);
            let (_, g1, g2) = link.eval_unchecked(cum);
            let w = wc.simplified(i, m).unwrap_or(0.0);
            c1[m] = w * e[m] * g1;
            c2[m] = w * a * g2;
        }
        if !cum.is_finite() {
            return Err(Error::NonFinite { subject: s.id.clone(), time: grid[k - 1], what: "kappa exposure" });
        }
        for (ui, &u) in gc.jump_times.iter().enumerate() {
            if u < dtime {
                continue;
            }
            let k0 = grid.partition_point(|t| *t <= u);
            if k0 >= k {
                continue;
            }
            let row = q.row_mut(ui);
            // Jump block: [l ≥ k0] c1_l + e_l Σ_{k ≥ max(l, k0)} c2_k.
            let mut suffix = 0.0;
            for l in (0..k).rev() {
                if l >= k0 {
                    suffix += c2[l];
                    row[d + l] += c1[l];
                }
                row[d + l] += e[l] * suffix;
            }
            // β block: Σ_{k ≥ k0} c1_k λ_k z_k + c2_k HZ(k).
            for m in k0..k {
                let (a1, a2) = (c1[m] * lambda[m], c2[m]);
                for c in 0..d {
                    row[c] += a1 * z[m * d + c] + a2 * hz[m * d + c];
                }
            }
        }
    }

    let censored_at: Vec<Option<usize>> = (0..n)
        .map(|j| {
            if is_censored(ds, j) {
                let x = follow_up(ds, j);
                gc.jump_times.iter().position(|u| *u == x)
            } else {
                None
            }
        })
        .collect();
    let ends: Vec<f64> = (0..n).map(|j| follow_up(ds, j)).collect();
    for (ui, &u) in gc.jump_times.iter().enumerate() {
        let r = gc.at_risk[ui] as f64;
        if !(r > 0.0) {
            return Err(Error::EmptyRiskSet { time: u });
        }
        let qrow: Vec<f64> = q.row(ui).iter().map(|v| v / r).collect();
        if qrow.iter().all(|v| *v == 0.0) {
            continue;
        }
        let drift = gc.counts[ui] as f64 / r;
        for j in 0..n {
            let mut dm = 0.0;
            if censored_at[j] == Some(ui) {
                dm += 1.0;
            }
            if ends[j] >= u {
                dm -= drift;
            }
            if dm != 0.0 {
                for (o, v) in out.row_mut(j).iter_mut().zip(&qrow) {
                    *o += dm * v;
                }
            }
        }
    }
    Ok(out)
}

/// Sandwich and inverse-information variances at a fitted optimum.
pub fn sandwich(fit: &FitResult, ds: &Dataset, wc: &WeightContext, gc: &CensoringSurvival, link: &LinkFunction) -> Result<VarianceResult> {
    let d = ds.dim();
    let p = fit.params();
    let ev = evaluate(&p, ds, wc, link, 2)?;
    let grad = ev.gradient.unwrap_or_default();
    let hess = ev.hessian.unwrap_or_else(|| Matrix::zeros(0, 0));
    let (_, h_raw) = to_raw_coordinates(d, &fit.jump_sizes, &grad, &hess);
    let mut fisher = h_raw;
    fisher.scale(-1.0);
    let chol = Cholesky::new(&fisher)?;
    let fisher_inverse = chol.inverse();
    let mut warnings = Vec::new();
    let cond = fisher.norm_one() * fisher_inverse.norm_one();
    if !(cond <= CONDITION_WARNING) {
        warnings.push(format!("observed information is ill-conditioned (condition number {cond:.3e})"));
    }

    let mut influence = eta_components(fit, ds, wc, link)?;
    let kappa = kappa_components(fit, ds, wc, gc, link)?;
    for i in 0..ds.n() {
        for (a, b) in influence.row_mut(i).iter_mut().zip(kappa.row(i)) {
            *a += b;
        }
    }

    let mut vr = VarianceResult {
        fisher,
        fisher_inverse,
        influence,
        beta_se: Vec::new(),
        fisher_only_se: Vec::new(),
        jump_times: fit.jump_times.clone(),
        d,
        warnings,
    };
    let total = d + ds.k();
    for j in 0..d {
        let mut h = vec![0.0; total];
        h[j] = 1.0;
        let (s, f) = vr.quadratic(&h)?;
        vr.beta_se.push(sqrt(s.max(0.0)));
        vr.fisher_only_se.push(sqrt(f.max(0.0)));
    }
    Ok(vr)
}
