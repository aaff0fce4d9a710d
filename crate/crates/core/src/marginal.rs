//! Marginal-mean curves: model-based prediction with pointwise Wald bands,
//! the pseudo-risk Nelson–Aalen estimator, and the Aalen–Johansen plug-in.

use alloc::vec::Vec;

use crate::censoring::{follow_up, WeightContext};
use crate::data::{dot, CovariateInterval, Dataset};
use crate::error::{Error, Result};
use crate::estimator::FitResult;
use crate::linalg::Matrix;
use crate::math::{exp, sqrt};
use crate::variance::VarianceResult;

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Right-continuous step function starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|s| *s <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }

    /// `sup_{t ≤ end} |self(t) − f(t)|` for a continuous nondecreasing `f`,
    /// checked at every jump, just before it, and at `end`.
    pub fn sup_distance<F: Fn(f64) -> f64>(&self, f: F, end: f64) -> f64 {
        let mut prev = 0.0;
        let mut worst: f64 = 0.0;
        for (t, v) in self.times.iter().zip(&self.values) {
            let ft = f(*t);
            worst = worst.max((prev - ft).abs()).max((v - ft).abs());
            prev = *v;
        }
        worst.max((prev - f(end)).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandScale {
    /// `mean ± z·se`.
    #[default]
    Linear,
    /// `mean · exp(±z·se/mean)`, which stays positive.
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

fn profile_at(profile: &[CovariateInterval], t: f64) -> &[f64] {
    let idx = profile.partition_point(|iv| iv.start <= t).max(1);
    &profile[idx - 1].values
}

/// `E{N*(t)|Z} = G(Σ_{t_m ≤ t} e^{β̂ᵀZ(t_m)} λ̂_m)` along a covariate profile,
/// with delta-method standard errors from `vr` when given.
pub fn predict_marginal_mean(
    fit: &FitResult,
    vr: Option<&VarianceResult>,
    profile: &[CovariateInterval],
    times: &[f64],
    scale: BandScale,
) -> Result<PredictionCurve> {
    match vr {
        Some(vr) => predict_with(fit, profile, times, scale, |h| Ok(vr.quadratic(h)?.0)),
        None => predict_with(fit, profile, times, scale, |_| Ok(0.0)),
    }
}

/// As [`predict_marginal_mean`], with the standard errors taken from a
/// stored covariance matrix of `(β, λ)`.
pub fn predict_with_covariance(
    fit: &FitResult,
    covariance: &Matrix,
    profile: &[CovariateInterval],
    times: &[f64],
    scale: BandScale,
) -> Result<PredictionCurve> {
    let p = fit.beta_hat.len() + fit.jump_times.len();
    if covariance.rows() != p || covariance.cols() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: covariance.rows() });
    }
    predict_with(fit, profile, times, scale, |h| Ok(covariance.quad_form(h, h)))
}

fn predict_with<V>(fit: &FitResult, profile: &[CovariateInterval], times: &[f64], scale: BandScale, mut variance: V) -> Result<PredictionCurve>
where
    V: FnMut(&[f64]) -> Result<f64>,
{
    let d = fit.beta_hat.len();
    if profile.is_empty() || profile[0].start != 0.0 {
        return Err(Error::InvalidArgument("covariate profile must start at time 0".into()));
    }
    if let Some(bad) = profile.iter().find(|iv| iv.values.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, actual: bad.values.len() });
    }
    if let Some(&t) = times.iter().find(|t| !(**t >= 0.0 && **t <= fit.tau)) {
        return Err(Error::TimeOutOfRange { time: t, tau: fit.tau });
    }
    let k = fit.jump_times.len();
    let exposure: Vec<f64> = fit.jump_times.iter().map(|&t| exp(dot(&fit.beta_hat, profile_at(profile, t)))).collect();

    let mut curve = PredictionCurve { times: times.to_vec(), mean: Vec::new(), se: Vec::new(), ci_low: Vec::new(), ci_high: Vec::new() };
    let mut h = Vec::with_capacity(d + k);
    for &t in times {
        let upto = fit.jump_times.partition_point(|s| *s <= t);
        let mut cum = 0.0;
        let mut hz = alloc::vec![0.0; d];
        for m in 0..upto {
            let a = exposure[m] * fit.jump_sizes[m];
            cum += a;
            for (acc, z) in hz.iter_mut().zip(profile_at(profile, fit.jump_times[m])) {
                *acc += a * z;
            }
        }
        let (g, g1, _) = fit.link.eval_unchecked(cum);
        h.clear();
        h.extend(hz.iter().map(|v| g1 * v));
        h.extend((0..k).map(|m| if m < upto { g1 * exposure[m] } else { 0.0 }));
        let se = sqrt(variance(&h)?.max(0.0));
        let (lo, hi) = match scale {
            BandScale::Linear => (g - Z_975 * se, g + Z_975 * se),
            BandScale::Log if g > 0.0 => {
                let f = exp(Z_975 * se / g);
                (g / f, g * f)
            }
            BandScale::Log => (0.0, 0.0),
        };
        curve.mean.push(g);
        curve.se.push(se);
        curve.ci_low.push(lo);
        curve.ci_high.push(hi);
    }
    Ok(curve)
}

/// `Λ̂(t) = Σ_{t_k ≤ t} dN(t_k) / Σ_i w_i(t_k)`.
pub fn nelson_aalen_pseudo(ds: &Dataset, wc: &WeightContext) -> Result<StepFunction> {
    let sizes = wc.pseudo_risk_sizes();
    let mut values = Vec::with_capacity(ds.k());
    let mut cum = 0.0;
    for (k, (&dn, &r)) in ds.multiplicity().iter().zip(&sizes).enumerate() {
        if !(r > 0.0) {
            return Err(Error::EmptyRiskSet { time: ds.recurrent_grid()[k] });
        }
        cum += dn as f64 / r;
        values.push(cum);
    }
    Ok(StepFunction { times: ds.recurrent_grid().to_vec(), values })
}

/// `Σ_{t_k ≤ t} Ŝ_D(t_k−) dN(t_k)/Y(t_k)` with `Y` the number of subjects
/// still under observation and `Ŝ_D` the Kaplan–Meier survival of the
/// terminal event, censoring removing subjects from both.
pub fn aalen_johansen_marginal_mean(ds: &Dataset) -> Result<StepFunction> {
    let n = ds.n();
    let mut ends: Vec<f64> = (0..n).map(|i| follow_up(ds, i)).collect();
    ends.sort_by(f64::total_cmp);
    let mut deaths: Vec<f64> = ds.subjects().iter().filter_map(|s| s.terminal_time).filter(|d| *d <= ds.tau()).collect();
    deaths.sort_by(f64::total_cmp);
    let at_risk = |t: f64| n - ends.partition_point(|x| *x < t);

    let mut values = Vec::with_capacity(ds.k());
    let mut surv = 1.0;
    let mut di = 0;
    let mut cum = 0.0;
    for (k, &t) in ds.recurrent_grid().iter().enumerate() {
        while di < deaths.len() && deaths[di] < t {
            let u = deaths[di];
            let mut c = 0;
            while di < deaths.len() && deaths[di] == u {
                c += 1;
                di += 1;
            }
            surv *= 1.0 - c as f64 / at_risk(u) as f64;
        }
        let y = at_risk(t);
        if y == 0 {
            return Err(Error::EmptyRiskSet { time: t });
        }
        cum += surv * ds.multiplicity()[k] as f64 / y as f64;
        values.push(cum);
    }
    Ok(StepFunction { times: ds.recurrent_grid().to_vec(), values })
}
