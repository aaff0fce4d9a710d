//! Discretized weighted log-likelihood with closed-form gradient and Hessian.
//!
//! For subject `i` write `a_m = exp(βᵀZ_i(t_m)) λ_m` and `H(k) = Σ_{m≤k} a_m`.
//! The contribution is
//!
//! ```text
//! Σ_recurrences [log λ_r + βᵀZ_i(t_r) + log G′(H(r))]
//!   − G(H(K_i))
//!   − Σ_{t_k > D_i} w*_i(t_k) a_k G′(H(k))
//! ```
//!
//! where `K_i` is the last grid index inside follow-up and the last sum runs
//! only for subjects with a terminal event. Derivatives are taken with
//! respect to `(β, u)` with `u = log λ`.

use alloc::vec;
use alloc::vec::Vec;

use crate::censoring::WeightContext;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::link::LinkFunction;
use crate::math::{exp, ln};

/// Linear predictors beyond this bound are rejected instead of saturating.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

/// Regression coefficients and log jump sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub beta: Vec<f64>,
    pub log_jumps: Vec<f64>,
}

impl ParamVector {
    pub fn new(beta: Vec<f64>, log_jumps: Vec<f64>) -> Self {
        Self { beta, log_jumps }
    }

    pub fn from_jumps(beta: Vec<f64>, jumps: &[f64]) -> Self {
        Self { beta, log_jumps: jumps.iter().map(|&l| ln(l)).collect() }
    }

    pub fn jumps(&self) -> Vec<f64> {
        self.log_jumps.iter().map(|&u| exp(u)).collect()
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.log_jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.log_jumps);
        v
    }

    pub fn from_flat(d: usize, v: &[f64]) -> Self {
        Self { beta: v[..d].to_vec(), log_jumps: v[d..].to_vec() }
    }
}

/// Log-likelihood value with optional gradient and Hessian, all in
/// `(β, log λ)` coordinates.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    pub hessian: Option<Matrix>,
}

/// Per-subject buffers reused across subjects.
#[derive(Debug, Default)]
struct Sweep {
    len: usize,
    lp: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    z: Vec<f64>,
    hz: Vec<f64>,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
    direct: Vec<f64>,
    cross: Vec<f64>,
}

impl Sweep {
    fn resize(&mut self, k: usize, d: usize) {
        for v in [&mut self.lp, &mut self.a, &mut self.h, &mut self.phi1, &mut self.phi2, &mut self.direct, &mut self.cross] {
            v.resize(k, 0.0);
        }
        self.z.resize(k * d, 0.0);
        self.hz.resize(k * d, 0.0);
    }
}

struct Problem<'a> {
    ds: &'a Dataset,
    wc: &'a WeightContext,
    link: &'a LinkFunction,
    beta: &'a [f64],
    u: &'a [f64],
    lambda: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(p: &'a ParamVector, ds: &'a Dataset, wc: &'a WeightContext, link: &'a LinkFunction) -> Result<Self> {
        check_shapes(p, ds, wc)?;
        Ok(Self { ds, wc, link, beta: &p.beta, u: &p.log_jumps, lambda: p.jumps() })
    }

    fn d(&self) -> usize {
        self.beta.len()
    }

    /// Forward sweep for subject `i`; returns its log-likelihood contribution.
    /// With `order ≥ 1` the derivative coefficients are filled as well.
    fn subject(&self, i: usize, sw: &mut Sweep, order: u8) -> Result<f64> {
        let ds = self.ds;
        let d = self.d();
        let len = self.wc.support_len(i);
        let kf = ds.follow_up_count(i);
        sw.len = len;
        ds.linear_predictor_on_grid(i, self.beta, &mut sw.lp[..len]);
        let mut cum = 0.0;
        for m in 0..len {
            let lp = sw.lp[m];
            if !(lp.abs() <= MAX_LINEAR_PREDICTOR) {
                return Err(self.non_finite(i, m, "linear predictor"));
            }
            let a = exp(lp) * self.lambda[m];
            cum += a;
            sw.a[m] = a;
            sw.h[m] = cum;
        }
        if !cum.is_finite() {
            return Err(self.non_finite(i, len - 1, "cumulative intensity"));
        }
        if order > 0 && d > 0 {
            fill_covariates(ds, i, len, &mut sw.z[..len * d]);
            let mut acc = vec![0.0; d];
            for m in 0..len {
                for c in 0..d {
                    acc[c] += sw.a[m] * sw.z[m * d + c];
                    sw.hz[m * d + c] = acc[c];
                }
            }
        }
        if order > 0 {
            for v in [&mut sw.phi1, &mut sw.phi2, &mut sw.direct, &mut sw.cross] {
                v[..len].fill(0.0);
            }
        }

        let link = self.link;
        let mut ll = 0.0;
        for &r in ds.event_indices(i) {
            let (_, g1, g2, g3) = link.eval_with_third(sw.h[r]);
            ll += self.u[r] + sw.lp[r] + ln(g1);
            if order > 0 {
                let ratio = g2 / g1;
                sw.phi1[r] += ratio;
                sw.phi2[r] += g3 / g1 - ratio * ratio;
            }
        }
        if kf > 0 {
            let (g, g1, g2, _) = link.eval_with_third(sw.h[kf - 1]);
            ll -= g;
            if order > 0 {
                sw.phi1[kf - 1] -= g1;
                sw.phi2[kf - 1] -= g2;
            }
        }
        if self.wc.has_terminal(i) {
            for k in kf..len {
                let w = self.wc.weight(i, k);
                let (_, g1, g2, g3) = link.eval_with_third(sw.h[k]);
                let a = sw.a[k];
                ll -= w * a * g1;
                if order > 0 {
                    sw.phi1[k] -= w * a * g2;
                    sw.phi2[k] -= w * a * g3;
                    sw.direct[k] = -w * g1;
                    sw.cross[k] = -w * g2;
                }
            }
        }
        if !ll.is_finite() {
            return Err(self.non_finite(i, len.saturating_sub(1), "log-likelihood"));
        }
        Ok(ll)
    }

    fn non_finite(&self, i: usize, m: usize, what: &'static str) -> Error {
        let time = self.ds.recurrent_grid().get(m).copied().unwrap_or(0.0);
        Error::NonFinite { subject: self.ds.subjects()[i].id.clone(), time, what }
    }

    /// Adds subject gradient to `g` (β block first, then `u` block).
    fn add_gradient(&self, i: usize, sw: &Sweep, g: &mut [f64]) {
        let d = self.d();
        let len = sw.len;
        let mut phi1_suffix = 0.0;
        for m in (0..len).rev() {
            phi1_suffix += sw.phi1[m];
            g[d + m] += sw.a[m] * (phi1_suffix + sw.direct[m]);
        }
        for &r in self.ds.event_indices(i) {
            g[d + r] += 1.0;
        }
        if d == 0 {
            return;
        }
        for &r in self.ds.event_indices(i) {
            for c in 0..d {
                g[c] += sw.z[r * d + c];
            }
        }
        for m in 0..len {
            let (p, da) = (sw.phi1[m], sw.direct[m] * sw.a[m]);
            if p == 0.0 && da == 0.0 {
                continue;
            }
            for c in 0..d {
                g[c] += p * sw.hz[m * d + c] + da * sw.z[m * d + c];
            }
        }
    }

    /// Adds subject Hessian to the lower triangle of `hess`.
    fn add_hessian(&self, sw: &Sweep, hess: &mut Matrix, scratch: &mut Vec<f64>) {
        let d = self.d();
        let len = sw.len;
        // Suffix sums Φ1 and Φ2 = Σ_{k≥m} φ.
        scratch.clear();
        scratch.resize(2 * len, 0.0);
        let (phi1_sfx, phi2_sfx) = scratch.split_at_mut(len);
        let (mut s1, mut s2) = (0.0, 0.0);
        for m in (0..len).rev() {
            s1 += sw.phi1[m];
            s2 += sw.phi2[m];
            phi1_sfx[m] = s1;
            phi2_sfx[m] = s2;
        }

        let dense = (0..len).any(|m| phi2_sfx[m] != 0.0 || sw.cross[m] != 0.0);
        for m in 0..len {
            let am = sw.a[m];
            let psi = phi2_sfx[m] + sw.cross[m];
            let row = hess.row_mut(d + m);
            if dense && psi != 0.0 {
                let coef = am * psi;
                for (dst, a) in row[d..d + m].iter_mut().zip(&sw.a[..m]) {
                    *dst += coef * a;
                }
            }
            row[d + m] += am * am * psi + am * phi1_sfx[m] + sw.direct[m] * am + sw.cross[m] * am * am;
        }
        if d == 0 {
            return;
        }

        // β–u block: a_m Σ_{k≥m} φ2_k HZ(k) + a_m Σ_{k≥m} X_k a_k z_k
        //            + z_m a_m (Φ1(m) + D_m) + X_m a_m HZ(m).
        let mut s_phi2_hz = vec![0.0; d];
        let mut s_cross_az = vec![0.0; d];
        for m in (0..len).rev() {
            let am = sw.a[m];
            let z = &sw.z[m * d..(m + 1) * d];
            let hz = &sw.hz[m * d..(m + 1) * d];
            let (p2, x) = (sw.phi2[m], sw.cross[m]);
            for c in 0..d {
                s_phi2_hz[c] += p2 * hz[c];
                s_cross_az[c] += x * am * z[c];
            }
            let lin = am * (phi1_sfx[m] + sw.direct[m]);
            let row = &mut hess.row_mut(d + m)[..d];
            for c in 0..d {
                row[c] += am * (s_phi2_hz[c] + s_cross_az[c]) + z[c] * lin + x * am * hz[c];
            }
        }

        // β–β block.
        for m in 0..len {
            let am = sw.a[m];
            let z = &sw.z[m * d..(m + 1) * d];
            let hz = &sw.hz[m * d..(m + 1) * d];
            let p2 = sw.phi2[m];
            let zz = am * (phi1_sfx[m] + sw.direct[m]);
            let xa = sw.cross[m] * am;
            for r in 0..d {
                let row = &mut hess.row_mut(r)[..=r];
                for c in 0..=r {
                    row[c] += p2 * hz[r] * hz[c] + zz * z[r] * z[c] + xa * (z[r] * hz[c] + hz[r] * z[c]);
                }
            }
        }
    }
}

fn fill_covariates(ds: &Dataset, i: usize, len: usize, out: &mut [f64]) {
    let d = ds.dim();
    let path = &ds.subjects()[i].covariate_path;
    let grid = ds.recurrent_grid();
    let mut interval = 0usize;
    for m in 0..len {
        while interval + 1 < path.len() && path[interval + 1].start <= grid[m] {
            interval += 1;
        }
        out[m * d..(m + 1) * d].copy_from_slice(&path[interval].values);
    }
}

fn check_shapes(p: &ParamVector, ds: &Dataset, wc: &WeightContext) -> Result<()> {
    if p.beta.len() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), actual: p.beta.len() });
    }
    if p.log_jumps.len() != ds.k() {
        return Err(Error::DimensionMismatch { expected: ds.k(), actual: p.log_jumps.len() });
    }
    if wc.grid() != ds.recurrent_grid() || wc.n() != ds.n() {
        return Err(Error::InvalidArgument("weight context was built from a different dataset".into()));
    }
    Ok(())
}

/// Log-likelihood and, depending on `order` (0, 1 or 2), its gradient and
/// Hessian in `(β, log λ)` coordinates. Subjects are summed in order, so the
/// result is reproducible bit for bit.
pub fn evaluate(p: &ParamVector, ds: &Dataset, wc: &WeightContext, link: &LinkFunction, order: u8) -> Result<Evaluation> {
    let prob = Problem::new(p, ds, wc, link)?;
    let d = ds.dim();
    let dim = d + ds.k();
    let mut sw = Sweep::default();
    sw.resize(ds.k(), d);
    let mut value = 0.0;
    let mut grad = (order >= 1).then(|| vec![0.0; dim]);
    let mut hess = (order >= 2).then(|| Matrix::zeros(dim, dim));
    let mut scratch = Vec::new();
    for i in 0..ds.n() {
        value += prob.subject(i, &mut sw, order)?;
        if let Some(g) = grad.as_mut() {
            prob.add_gradient(i, &sw, g);
        }
        if let Some(h) = hess.as_mut() {
            prob.add_hessian(&sw, h, &mut scratch);
        }
    }
    if let Some(h) = hess.as_mut() {
        h.symmetrize_from_lower();
    }
    Ok(Evaluation { value, gradient: grad, hessian: hess })
}

pub fn loglik(p: &ParamVector, ds: &Dataset, wc: &WeightContext, link: &LinkFunction) -> Result<f64> {
    Ok(evaluate(p, ds, wc, link, 0)?.value)
}

/// Gradient with respect to `(β, log λ)`.
pub fn grad_loglik(p: &ParamVector, ds: &Dataset, wc: &WeightContext, link: &LinkFunction) -> Result<Vec<f64>> {
    Ok(evaluate(p, ds, wc, link, 1)?.gradient.unwrap_or_default())
}

/// Hessian with respect to `(β, log λ)`.
pub fn hessian_loglik(p: &ParamVector, ds: &Dataset, wc: &WeightContext, link: &LinkFunction) -> Result<Matrix> {
    let ev = evaluate(p, ds, wc, link, 2)?;
    Ok(ev.hessian.unwrap_or_else(|| Matrix::zeros(0, 0)))
}

/// Per-subject score vectors in raw `(β, λ)` coordinates, one row per
/// subject. Rows sum to the total gradient.
pub fn subject_scores(p: &ParamVector, ds: &Dataset, wc: &WeightContext, link: &LinkFunction) -> Result<Matrix> {
    let prob = Problem::new(p, ds, wc, link)?;
    let d = ds.dim();
    let dim = d + ds.k();
    let mut sw = Sweep::default();
    sw.resize(ds.k(), d);
    let mut out = Matrix::zeros(ds.n(), dim);
    for i in 0..ds.n() {
        prob.subject(i, &mut sw, 1)?;
        let row = out.row_mut(i);
        prob.add_gradient(i, &sw, row);
        for (g, l) in row[d..].iter_mut().zip(&prob.lambda) {
            *g /= l;
        }
    }
    Ok(out)
}

/// Converts a gradient and Hessian in `(β, log λ)` coordinates to raw
/// `(β, λ)` coordinates.
pub fn to_raw_coordinates(d: usize, lambda: &[f64], grad: &[f64], hess: &Matrix) -> (Vec<f64>, Matrix) {
    let dim = grad.len();
    let scale: Vec<f64> = (0..dim).map(|j| if j < d { 1.0 } else { 1.0 / lambda[j - d] }).collect();
    let g: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| g * s).collect();
    let mut h = hess.clone();
    for r in 0..dim {
        let sr = scale[r];
        for (c, v) in h.row_mut(r).iter_mut().enumerate() {
            *v *= sr * scale[c];
        }
    }
    for j in d..dim {
        h[(j, j)] -= grad[j] * scale[j] * scale[j];
    }
    (g, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::censoring::{ipc_weights, km_censoring};
    use crate::data::SubjectRecord;
    use approx::assert_relative_eq;
    use std::format;

    fn subj(id: &str, z: Vec<f64>, rec: Vec<f64>, term: Option<f64>, c: f64) -> SubjectRecord {
        SubjectRecord::with_constant_covariates(id, z, rec, term, c)
    }

    fn two_subject() -> (Dataset, WeightContext) {
        let ds = Dataset::new(vec![subj("1", vec![], vec![1.0], None, 5.0), subj("2", vec![], vec![2.0], None, 5.0)], 5.0).unwrap();
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        (ds, wc)
    }

    #[test]
    fn two_subject_hand_expansion() {
        let (ds, wc) = two_subject();
        let id = LinkFunction::identity();
        for (l1, l2) in [(0.5, 0.5), (0.3, 1.7), (2.0, 0.1)] {
            let p = ParamVector::from_jumps(vec![], &[l1, l2]);
            let hand = ln(l1) + ln(l2) - 2.0 * (l1 + l2);
            assert_relative_eq!(loglik(&p, &ds, &wc, &id).unwrap(), hand, epsilon = 1e-14);
        }
        let p = ParamVector::from_jumps(vec![], &[0.5, 0.5]);
        assert_relative_eq!(loglik(&p, &ds, &wc, &id).unwrap(), -2.0 * core::f64::consts::LN_2 - 2.0, epsilon = 1e-14);
        let g = grad_loglik(&p, &ds, &wc, &id).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let h = hessian_loglik(&p, &ds, &wc, &id).unwrap();
        assert_relative_eq!(h[(0, 0)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(h[(1, 1)], -1.0, epsilon = 1e-14);
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn vanishing_jumps_diverge() {
        let (ds, wc) = two_subject();
        let p = ParamVector::new(vec![], vec![-200.0, -200.0]);
        assert!(loglik(&p, &ds, &wc, &LinkFunction::identity()).unwrap() < -399.0);
    }

    #[test]
    fn overflow_is_reported() {
        let ds = Dataset::new(vec![subj("x", vec![10.0], vec![1.0], None, 5.0)], 5.0).unwrap();
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        let p = ParamVector::new(vec![80.0], vec![0.0]);
        let err = loglik(&p, &ds, &wc, &LinkFunction::identity()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref subject, .. } if subject == "x"));
    }

    #[test]
    fn empty_beta_block() {
        let (ds, wc) = two_subject();
        let p = ParamVector::from_jumps(vec![], &[0.2, 0.9]);
        assert_eq!(grad_loglik(&p, &ds, &wc, &LinkFunction::identity()).unwrap().len(), 2);
    }

    fn small_dataset(terminal: bool) -> Dataset {
        let mut s = vec![
            subj("a", vec![0.3, -1.0], vec![0.5, 1.5, 2.5], None, 4.0),
            subj("b", vec![-0.4, 0.2], vec![1.0], None, 2.2),
            subj("c", vec![1.1, 0.5], vec![], None, 5.0),
            subj("d", vec![0.0, 0.9], vec![0.7, 3.5], None, 5.0),
        ];
        if terminal {
            s.push(subj("e", vec![0.6, -0.3], vec![0.9], Some(1.2), 1.2));
            s.push(subj("f", vec![-0.8, 0.1], vec![], Some(2.0), 2.0));
        }
        Dataset::new(s, 5.0).unwrap()
    }

    fn links() -> Vec<LinkFunction> {
        vec![
            LinkFunction::identity(),
            LinkFunction::box_cox(0.5).unwrap(),
            LinkFunction::box_cox(2.0).unwrap(),
            LinkFunction::box_cox(0.0).unwrap(),
            LinkFunction::logarithmic(1.0).unwrap(),
            LinkFunction::logarithmic(0.3).unwrap(),
        ]
    }

    fn params(ds: &Dataset, shift: f64) -> ParamVector {
        let jumps: Vec<f64> = (0..ds.k()).map(|m| 0.1 + 0.05 * ((m as f64 + shift) % 3.0)).collect();
        ParamVector::from_jumps(vec![0.4, -0.25], &jumps)
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for terminal in [false, true] {
            let ds = small_dataset(terminal);
            let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
            for link in links() {
                let p = params(&ds, 1.0);
                let ev = evaluate(&p, &ds, &wc, &link, 2).unwrap();
                let g = ev.gradient.unwrap();
                let h = ev.hessian.unwrap();
                assert!(h.max_asymmetry() < 1e-12);
                let x = p.to_flat();
                let eps = 1e-5;
                for j in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += eps;
                    xm[j] -= eps;
                    let pp = ParamVector::from_flat(2, &xp);
                    let pm = ParamVector::from_flat(2, &xm);
                    let fd = (loglik(&pp, &ds, &wc, &link).unwrap() - loglik(&pm, &ds, &wc, &link).unwrap()) / (2.0 * eps);
                    assert!((fd - g[j]).abs() < 1e-7 * g[j].abs().max(1.0), "{link} grad {j}: {fd} vs {}", g[j]);
                    let gp = grad_loglik(&pp, &ds, &wc, &link).unwrap();
                    let gm = grad_loglik(&pm, &ds, &wc, &link).unwrap();
                    for c in 0..x.len() {
                        let fd = (gp[c] - gm[c]) / (2.0 * eps);
                        assert!((fd - h[(c, j)]).abs() < 1e-6 * h[(c, j)].abs().max(1.0), "{link} hess ({c},{j}): {fd} vs {}", h[(c, j)]);
                    }
                }
            }
        }
    }

    /// Direct evaluation of the cure-model likelihood without the
    /// pseudo-risk machinery, using `covariate_at` and explicit integrals.
    fn cure_loglik(p: &ParamVector, ds: &Dataset, link: &LinkFunction) -> f64 {
        let grid = ds.recurrent_grid();
        let lam = p.jumps();
        let integral = |s: &SubjectRecord, t: f64| -> f64 {
            grid.iter()
                .zip(&lam)
                .filter(|(g, _)| **g <= t)
                .map(|(g, l)| {
                    let z = crate::data::covariate_at(s, *g, ds.tau()).unwrap();
                    exp(crate::data::dot(&p.beta, z)) * l
                })
                .sum()
        };
        let mut total = 0.0;
        for s in ds.subjects() {
            for &t in &s.recurrent_times {
                let k = grid.iter().position(|g| *g == t).unwrap();
                let z = crate::data::covariate_at(s, t, ds.tau()).unwrap();
                let (_, g1, _) = link.eval_unchecked(integral(s, t));
                total += ln(lam[k]) + crate::data::dot(&p.beta, z) + ln(g1);
            }
            total -= link.g(integral(s, s.follow_up_end().min(ds.tau())));
        }
        total
    }

    #[test]
    fn matches_direct_cure_likelihood_without_terminal_events() {
        let ds = small_dataset(false);
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        for link in links() {
            let p = params(&ds, 0.0);
            let a = loglik(&p, &ds, &wc, &link).unwrap();
            let b = cure_loglik(&p, &ds, &link);
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{link}: {a} vs {b}");
        }
    }

    #[test]
    fn subject_permutation_invariance() {
        let ds = small_dataset(true);
        let mut subjects = ds.subjects().to_vec();
        subjects.reverse();
        let rev = Dataset::new(subjects, 5.0).unwrap();
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        let wr = ipc_weights(&rev, &km_censoring(&rev).unwrap()).unwrap();
        let p = params(&ds, 2.0);
        for link in links() {
            let a = loglik(&p, &ds, &wc, &link).unwrap();
            let b = loglik(&p, &rev, &wr, &link).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs(), "{link}");
        }
    }

    #[test]
    fn identity_link_is_concave_in_each_log_jump() {
        let ds = small_dataset(true);
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        let h = hessian_loglik(&params(&ds, 0.0), &ds, &wc, &LinkFunction::identity()).unwrap();
        for m in 0..ds.k() {
            assert!(h[(2 + m, 2 + m)] < 0.0);
        }
    }

    #[test]
    fn subject_scores_sum_to_raw_gradient() {
        let ds = small_dataset(true);
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        for link in links() {
            let p = params(&ds, 1.0);
            let ev = evaluate(&p, &ds, &wc, &link, 2).unwrap();
            let (g_raw, _) = to_raw_coordinates(2, &p.jumps(), ev.gradient.as_ref().unwrap(), ev.hessian.as_ref().unwrap());
            let scores = subject_scores(&p, &ds, &wc, &link).unwrap();
            for j in 0..g_raw.len() {
                let s: f64 = (0..ds.n()).map(|i| scores[(i, j)]).sum();
                assert!((s - g_raw[j]).abs() < 1e-10 * g_raw[j].abs().max(1.0), "{}", format!("{link} {j}"));
            }
        }
    }

    #[test]
    fn raw_coordinate_hessian_matches_finite_differences() {
        let ds = small_dataset(true);
        let wc = ipc_weights(&ds, &km_censoring(&ds).unwrap()).unwrap();
        let link = LinkFunction::box_cox(0.5).unwrap();
        let p = params(&ds, 0.0);
        let lam = p.jumps();
        let ev = evaluate(&p, &ds, &wc, &link, 2).unwrap();
        let (_, h_raw) = to_raw_coordinates(2, &lam, ev.gradient.as_ref().unwrap(), ev.hessian.as_ref().unwrap());
        let raw_grad = |lam: &[f64]| {
            let q = ParamVector::from_jumps(p.beta.clone(), lam);
            let ev = evaluate(&q, &ds, &wc, &link, 2).unwrap();
            to_raw_coordinates(2, lam, ev.gradient.as_ref().unwrap(), ev.hessian.as_ref().unwrap()).0
        };
        for j in 0..ds.k() {
            let eps = 1e-6 * lam[j];
            let mut lp = lam.clone();
            let mut lm = lam.clone();
            lp[j] += eps;
            lm[j] -= eps;
            let (gp, gm) = (raw_grad(&lp), raw_grad(&lm));
            for c in 0..gp.len() {
                let fd = (gp[c] - gm[c]) / (2.0 * eps);
                let an = h_raw[(c, 2 + j)];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "({c},{j}) {fd} vs {an}");
            }
        }
    }
}
