//! Weighted NPMLE: initialization, the profile self-consistency sweep, the
//! joint quasi-Newton/Newton solver, and the Ghosh–Lin weighted score
//! solver used as a cross-check for the identity link.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::censoring::{ipc_weights, km_censoring, WeightContext};
use crate::data::{dot, Dataset};
use crate::error::{Error, Result};
use crate::likelihood::{evaluate, ParamVector, MAX_LINEAR_PREDICTOR};
use crate::linalg::{Cholesky, Matrix};
use crate::link::LinkFunction;
use crate::math::{abs, exp, ln};
use crate::optim::{accept_step, lbfgs_maximize, max_abs, newton_maximize, LbfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max-norm gradient tolerance in `(β, log λ)` coordinates.
    pub tol: f64,
    /// Relative log-likelihood change required alongside `tol`.
    pub rel_tol: f64,
    /// Iteration cap for the quasi-Newton phase.
    pub max_iter: usize,
    /// Iteration cap for the Newton polish.
    pub newton_max_iter: usize,
    /// Gradient tolerance at which the quasi-Newton phase hands over.
    pub handover_tol: f64,
    pub profile_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, rel_tol: 1e-12, max_iter: 500, newton_max_iter: 50, handover_tol: 1e-3, profile_sweeps: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub link: LinkFunction,
    pub n: usize,
    pub tau: f64,
}

impl FitResult {
    pub fn params(&self) -> ParamVector {
        ParamVector::from_jumps(self.beta_hat.clone(), &self.jump_sizes)
    }

    /// `Λ̂₀(t) = Σ_{t_m ≤ t} λ_m`.
    pub fn cumulative_baseline(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|s| *s <= t);
        self.jump_sizes[..idx].iter().sum()
    }

    /// AIC with the jump sizes counted as parameters.
    pub fn aic(&self) -> f64 {
        -2.0 * self.loglik + 2.0 * (self.beta_hat.len() + self.jump_sizes.len()) as f64
    }
}

/// `β = 0` and weighted Nelson–Aalen jumps `dN(t_k)/Σ_i w_i(t_k)`.
pub fn initial_values(ds: &Dataset, wc: &WeightContext) -> Result<ParamVector> {
    let sizes = wc.pseudo_risk_sizes();
    let mut jumps = Vec::with_capacity(ds.k());
    for (k, (&dn, &r)) in ds.multiplicity().iter().zip(&sizes).enumerate() {
        if !(r > 0.0) {
            return Err(Error::EmptyRiskSet { time: ds.recurrent_grid()[k] });
        }
        jumps.push(dn as f64 / r);
    }
    Ok(ParamVector::from_jumps(vec![0.0; ds.dim()], &jumps))
}

/// One sweep of `λ_k ← dN(t_k) / Σ_i w_i(t_k) e^{βᵀZ_i(t_k)} G′(H_i(t_k))`.
/// The update is an exact fixed point of the likelihood only for the
/// identity link; for other links it is a stabilizing heuristic.
pub fn profile_jump_update(
    beta: &[f64],
    jumps: &[f64],
    ds: &Dataset,
    wc: &WeightContext,
    link: &LinkFunction,
) -> Result<Vec<f64>> {
    if beta.len() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), actual: beta.len() });
    }
    if jumps.len() != ds.k() {
        return Err(Error::DimensionMismatch { expected: ds.k(), actual: jumps.len() });
    }
    let k = ds.k();
    let mut denom = vec![0.0; k];
    let mut lp = vec![0.0; k];
    for i in 0..ds.n() {
        let len = wc.support_len(i);
        ds.linear_predictor_on_grid(i, beta, &mut lp[..len]);
        let mut cum = 0.0;
        for m in 0..len {
            if !(abs(lp[m]) <= MAX_LINEAR_PREDICTOR) {
                return Err(Error::NonFinite { subject: ds.subjects()[i].id.clone(), time: ds.recurrent_grid()[m], what: "linear predictor" });
            }
            let e = exp(lp[m]);
            cum += e * jumps[m];
            let (_, g1, _) = link.eval_unchecked(cum);
            denom[m] += wc.weight(i, m) * e * g1;
        }
    }
    let mut out = Vec::with_capacity(k);
    for m in 0..k {
        if !(denom[m] > 0.0) {
            return Err(Error::EmptyRiskSet { time: ds.recurrent_grid()[m] });
        }
        out.push(ds.multiplicity()[m] as f64 / denom[m]);
    }
    Ok(out)
}

/// Fits the model, building the censoring weights from `ds`.
pub fn fit_npmle(ds: &Dataset, link: &LinkFunction, opts: &SolverOptions) -> Result<FitResult> {
    let gc = km_censoring(ds)?;
    let wc = ipc_weights(ds, &gc)?;
    fit_npmle_weighted(ds, &wc, link, opts)
}

/// Fits the model with precomputed weights. A run that exhausts its
/// iteration budget returns the best iterate with `converged = false`.
pub fn fit_npmle_weighted(ds: &Dataset, wc: &WeightContext, link: &LinkFunction, opts: &SolverOptions) -> Result<FitResult> {
    if ds.total_recurrences() == 0 {
        return Err(Error::NoEvents);
    }
    let d = ds.dim();
    let mut start = initial_values(ds, wc)?;
    evaluate(&start, ds, wc, link, 0)?;
    for _ in 0..opts.profile_sweeps {
        match profile_jump_update(&start.beta, &start.jumps(), ds, wc, link) {
            Ok(j) => start = ParamVector::from_jumps(start.beta.clone(), &j),
            Err(_) => break,
        }
    }

    let value_grad = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let ev = evaluate(&ParamVector::from_flat(d, x), ds, wc, link, 1)?;
        Ok((ev.value, ev.gradient.unwrap_or_default()))
    };
    let lb_opts = LbfgsOptions { max_iter: opts.max_iter, grad_tol: opts.handover_tol.max(opts.tol), rel_tol: opts.rel_tol, ..Default::default() };
    let stage1 = lbfgs_maximize(start.to_flat(), value_grad, &lb_opts)?;

    let full = |x: &[f64], want_hessian: bool| -> Result<(f64, Vec<f64>, Option<Matrix>)> {
        let ev = evaluate(&ParamVector::from_flat(d, x), ds, wc, link, if want_hessian { 2 } else { 1 })?;
        Ok((ev.value, ev.gradient.unwrap_or_default(), ev.hessian))
    };
    let stage2 = newton_maximize(stage1.x, full, opts.tol, opts.rel_tol, opts.newton_max_iter)?;
    let gradient_norm = max_abs(&stage2.gradient);
    let p = ParamVector::from_flat(d, &stage2.x);
    Ok(FitResult {
        beta_hat: p.beta.clone(),
        jump_times: ds.recurrent_grid().to_vec(),
        jump_sizes: p.jumps(),
        loglik: stage2.value,
        iterations: stage1.iterations + stage2.iterations,
        converged: gradient_norm < opts.tol,
        gradient_norm,
        link: *link,
        n: ds.n(),
        tau: ds.tau(),
    })
}

/// Weighted Breslow partial log-likelihood `Σ_events [βᵀZ − log S0]` with
/// its score `U` and derivative of `U`.
fn ghosh_lin_objective(beta: &[f64], ds: &Dataset, wc: &WeightContext) -> Result<(f64, Vec<f64>, Matrix)> {
    let d = ds.dim();
    let k = ds.k();
    let mut s0 = vec![0.0; k];
    let mut s1 = vec![0.0; k * d];
    let mut s2 = vec![0.0; k * d * d];
    let mut value = 0.0;
    let mut score = vec![0.0; d];
    for (i, s) in ds.subjects().iter().enumerate() {
        for &r in ds.event_indices(i) {
            let z = ds.covariates_on_grid(i, r);
            value += dot(beta, z);
            for c in 0..d {
                score[c] += z[c];
            }
        }
        for m in 0..wc.support_len(i) {
            let w = wc.weight(i, m);
            if w == 0.0 {
                continue;
            }
            let z = ds.covariates_on_grid(i, m);
            let lp = dot(beta, z);
            if !(abs(lp) <= MAX_LINEAR_PREDICTOR) {
                return Err(Error::NonFinite { subject: s.id.clone(), time: ds.recurrent_grid()[m], what: "linear predictor" });
            }
            let we = w * exp(lp);
            s0[m] += we;
            for a in 0..d {
                s1[m * d + a] += we * z[a];
                for b in 0..d {
                    s2[(m * d + a) * d + b] += we * z[a] * z[b];
                }
            }
        }
    }
    let mut jac = Matrix::zeros(d, d);
    for m in 0..k {
        let dn = ds.multiplicity()[m] as f64;
        if s0[m] <= 0.0 {
            return Err(Error::EmptyRiskSet { time: ds.recurrent_grid()[m] });
        }
        value -= dn * ln(s0[m]);
        for a in 0..d {
            let za = s1[m * d + a] / s0[m];
            score[a] -= dn * za;
            for b in 0..d {
                let zb = s1[m * d + b] / s0[m];
                jac[(a, b)] -= dn * (s2[(m * d + a) * d + b] / s0[m] - za * zb);
            }
        }
    }
    Ok((value, score, jac))
}

/// Root of the weighted partial-likelihood score by damped Newton with
/// step halving from `β = 0`.
pub fn ghosh_lin_fit(ds: &Dataset, wc: &WeightContext) -> Result<Vec<f64>> {
    let d = ds.dim();
    if d == 0 {
        return Err(Error::InvalidArgument(String::from("the Ghosh-Lin score needs at least one covariate")));
    }
    if ds.total_recurrences() == 0 {
        return Err(Error::NoEvents);
    }
    let mut beta = vec![0.0; d];
    let (mut value, mut score, mut jac) = ghosh_lin_objective(&beta, ds, wc)?;
    for iteration in 0..200 {
        if max_abs(&score) < 1e-11 * (ds.total_recurrences() as f64).max(1.0) {
            return Ok(beta);
        }
        let mut neg = jac.clone();
        neg.scale(-1.0);
        let step = Cholesky::new(&neg).map_err(|_| Error::NotPositiveDefinite { pivot: iteration })?.solve(&score);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            if let Ok((v, g, j)) = ghosh_lin_objective(&trial, ds, wc) {
                if accept_step(value, &score, v, &g) {
                    moved = trial != beta;
                    beta = trial;
                    value = v;
                    score = g;
                    jac = j;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if max_abs(&score) < 1e-8 * (ds.total_recurrences() as f64).max(1.0) {
        Ok(beta)
    } else {
        Err(Error::NoConvergence { solver: "ghosh-lin", iterations: 200, gradient_norm: max_abs(&score) })
    }
}

/// Ghosh–Lin score `U(β)` on its own, for external root checks.
pub fn ghosh_lin_score(beta: &[f64], ds: &Dataset, wc: &WeightContext) -> Result<Vec<f64>> {
    Ok(ghosh_lin_objective(beta, ds, wc)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use crate::likelihood::grad_loglik;
    use approx::assert_relative_eq;
    use std::format;

    fn subj(id: &str, z: Vec<f64>, rec: Vec<f64>, term: Option<f64>, c: f64) -> SubjectRecord {
        SubjectRecord::with_constant_covariates(id, z, rec, term, c)
    }

    fn weights(ds: &Dataset) -> WeightContext {
        ipc_weights(ds, &km_censoring(ds).unwrap()).unwrap()
    }

    #[test]
    fn initial_jumps_are_weighted_nelson_aalen() {
        let ds = Dataset::new((0..4).map(|i| subj(&format!("{i}"), vec![0.1, 0.2], if i == 0 { vec![1.0] } else { vec![] }, None, 5.0)).collect(), 5.0).unwrap();
        let p = initial_values(&ds, &weights(&ds)).unwrap();
        assert_eq!(p.jumps(), vec![0.25]);
        assert_eq!(p.beta, vec![0.0, 0.0]);
    }

    #[test]
    fn initial_jumps_on_ipc_fixture() {
        // Same four subjects as the censoring fixture: pseudo risk (4, 4, 8/3).
        let ds = Dataset::new(
            vec![
                subj("A", vec![], vec![], None, 2.5),
                subj("B", vec![], vec![], Some(2.0), 2.0),
                subj("C", vec![], vec![1.0, 3.0], None, 4.0),
                subj("D", vec![], vec![2.5], None, 5.0),
            ],
            5.0,
        )
        .unwrap();
        let jumps = initial_values(&ds, &weights(&ds)).unwrap().jumps();
        assert_relative_eq!(jumps[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(jumps[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(jumps[2], 3.0 / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn profile_update_two_subject() {
        let ds = Dataset::new(vec![subj("1", vec![], vec![1.0], None, 5.0), subj("2", vec![], vec![2.0], None, 5.0)], 5.0).unwrap();
        let wc = weights(&ds);
        let out = profile_jump_update(&[], &[1.0, 1.0], &ds, &wc, &LinkFunction::identity()).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn two_subject_fit() {
        let ds = Dataset::new(vec![subj("1", vec![], vec![1.0], None, 5.0), subj("2", vec![], vec![2.0], None, 5.0)], 5.0).unwrap();
        let fit = fit_npmle(&ds, &LinkFunction::identity(), &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.jump_sizes[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.jump_sizes[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.loglik, -2.0 * core::f64::consts::LN_2 - 2.0, epsilon = 1e-12);
    }

    fn mixed() -> Dataset {
        Dataset::new(
            vec![
                subj("a", vec![0.3, 1.0], vec![0.5, 1.5, 2.5], None, 4.0),
                subj("b", vec![-0.4, 0.0], vec![1.0], None, 2.2),
                subj("c", vec![1.1, 1.0], vec![3.0], None, 5.0),
                subj("d", vec![0.0, 0.0], vec![0.7, 3.5, 4.0], None, 5.0),
                subj("e", vec![0.6, 1.0], vec![0.9], Some(1.2), 1.2),
                subj("f", vec![-0.8, 0.0], vec![], Some(2.0), 2.0),
                subj("g", vec![0.2, 1.0], vec![0.2, 4.5], None, 5.0),
                subj("h", vec![-1.2, 0.0], vec![2.0], None, 3.0),
            ],
            5.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_fit_is_a_profile_fixed_point_and_matches_ghosh_lin() {
        let ds = mixed();
        let wc = weights(&ds);
        let id = LinkFunction::identity();
        let fit = fit_npmle_weighted(&ds, &wc, &id, &SolverOptions::default()).unwrap();
        assert!(fit.converged, "{}", fit.gradient_norm);
        let again = profile_jump_update(&fit.beta_hat, &fit.jump_sizes, &ds, &wc, &id).unwrap();
        for (a, b) in again.iter().zip(&fit.jump_sizes) {
            assert!((a - b).abs() < 1e-6 * b);
        }
        let gl = ghosh_lin_fit(&ds, &wc).unwrap();
        for (a, b) in gl.iter().zip(&fit.beta_hat) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn nonidentity_fit_converges() {
        let ds = mixed();
        let wc = weights(&ds);
        for link in [LinkFunction::box_cox(0.5).unwrap(), LinkFunction::logarithmic(1.0).unwrap()] {
            let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
            assert!(fit.converged);
            let g = grad_loglik(&fit.params(), &ds, &wc, &link).unwrap();
            assert!(max_abs(&g) < 1e-8);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = mixed();
        let link = LinkFunction::box_cox(2.0).unwrap();
        let a = fit_npmle(&ds, &link, &SolverOptions::default()).unwrap();
        let b = fit_npmle(&ds, &link, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerates_to_nelson_aalen() {
        let ds = Dataset::new(
            vec![
                subj("1", vec![], vec![0.5, 2.0], None, 5.0),
                subj("2", vec![], vec![2.0], None, 5.0),
                subj("3", vec![], vec![], None, 5.0),
            ],
            5.0,
        )
        .unwrap();
        let fit = fit_npmle(&ds, &LinkFunction::identity(), &SolverOptions::default()).unwrap();
        assert!((fit.jump_sizes[0] - 1.0 / 3.0).abs() < 1e-10);
        assert!((fit.jump_sizes[1] - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn symmetric_groups_give_zero_ghosh_lin() {
        let mut s = Vec::new();
        for g in [0.0, 1.0] {
            s.push(subj(&format!("{g}a"), vec![g], vec![1.0, 2.0], None, 5.0));
            s.push(subj(&format!("{g}b"), vec![g], vec![3.0], None, 4.0));
        }
        let ds = Dataset::new(s, 5.0).unwrap();
        let beta = ghosh_lin_fit(&ds, &weights(&ds)).unwrap();
        assert!(beta[0].abs() < 1e-12);
    }

    #[test]
    fn single_event_score_root_by_bisection() {
        let ds = Dataset::new(
            vec![
                subj("1", vec![1.0], vec![1.0], None, 5.0),
                subj("2", vec![0.0], vec![], None, 0.5),
                subj("3", vec![2.0], vec![], None, 5.0),
                subj("4", vec![-1.0], vec![], Some(0.7), 0.7),
            ],
            5.0,
        )
        .unwrap();
        let wc = weights(&ds);
        // U(β) = 1 − Σ w_j z_j e^{β z_j} / Σ w_j e^{β z_j}, decreasing in β.
        let u = |b: f64| ghosh_lin_score(&[b], &ds, &wc).unwrap()[0];
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if u(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let beta = ghosh_lin_fit(&ds, &wc).unwrap();
        assert!((beta[0] - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn rejects_event_free_data() {
        let ds = Dataset::new(vec![subj("1", vec![], vec![], None, 5.0)], 5.0).unwrap();
        assert_eq!(fit_npmle(&ds, &LinkFunction::identity(), &SolverOptions::default()), Err(Error::NoEvents));
    }
}
