//! Data generation from the marginal-mean transformation model with
//! Gompertz baselines.
//!
//! Each subject carries two improper sub-distributions
//! `F1(t|Z) = 1 − exp[−G{e^{βᵀZ} Λ₀^{γ1,γ2}(t)}]` for recurrences and
//! `F2(t|Z) = 1 − exp[−G{e^{β2ᵀZ} Λ₀^{γ3,γ4}(t)}]` for the terminal event.
//! From the previous event time `s` the next event is a recurrence with
//! probability `{F1(∞) − F1(s)}/S(s)`, terminal with probability
//! `{F2(∞) − F2(s)}/S(s)`, and absent otherwise, where
//! `S = 1 − F1 − F2`. Its time is drawn from the chosen sub-distribution
//! conditioned on exceeding `s`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{dot, Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::link::LinkFunction;
use crate::math::{exp, exp_m1, ln_1p};

/// Time tolerance of the inversion.
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Recurrent,
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub link: LinkFunction,
    pub beta: Vec<f64>,
    /// Terminal-event coefficients; `None` means `beta`.
    pub beta2: Option<Vec<f64>>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma4: f64,
    pub gamma3_cap: f64,
    pub censor_low: f64,
    pub censor_high: f64,
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
    /// When false every subject is followed to `tau`.
    pub random_censoring: bool,
    /// When false `F2 ≡ 0` and no terminal events occur.
    pub terminal_events: bool,
    /// Replaces the standard normal covariates by this fixed vector.
    pub fixed_covariates: Option<Vec<f64>>,
}

impl SimulationConfig {
    /// Box–Cox and logarithmic scenarios with `β = β2 = (1, −0.5)`.
    pub fn preset(name: &str) -> Option<Self> {
        let (link, g1, g2, g4, cap, high) = match name {
            "scenario_bc_05" => (LinkFunction::box_cox(0.5).ok()?, 2.5, 0.4, 0.05, 0.3, 20.0),
            "scenario_bc_1" => (LinkFunction::box_cox(1.0).ok()?, 1.8, 0.2, 0.1, 0.3, 20.0),
            "scenario_bc_2" => (LinkFunction::box_cox(2.0).ok()?, 0.9, 0.4, 0.05, 0.3, 20.0),
            "scenario_log_05" => (LinkFunction::logarithmic(0.5).ok()?, 2.9, 0.8, 0.033, 0.5, 21.0),
            "scenario_log_1" => (LinkFunction::logarithmic(1.0).ok()?, 5.3, 1.8, 0.025, 0.5, 20.5),
            _ => return None,
        };
        Some(Self {
            link,
            beta: vec![1.0, -0.5],
            beta2: None,
            gamma1: g1,
            gamma2: g2,
            gamma4: g4,
            gamma3_cap: cap,
            censor_low: 2.0,
            censor_high: high,
            tau: 5.0,
            n: 200,
            seed: 1,
            random_censoring: true,
            terminal_events: true,
            fixed_covariates: None,
        })
    }

    pub const PRESETS: [&'static str; 5] = ["scenario_bc_05", "scenario_bc_1", "scenario_bc_2", "scenario_log_05", "scenario_log_1"];

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn beta2(&self) -> &[f64] {
        self.beta2.as_deref().unwrap_or(&self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma4", self.gamma4), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.gamma3_cap > 0.0) {
            return bad(format!("gamma3_cap must be positive, got {}", self.gamma3_cap));
        }
        if self.random_censoring && !(self.censor_low < self.censor_high && self.censor_low >= 0.0) {
            return bad(format!("need 0 <= censor_low < censor_high, got [{}, {}]", self.censor_low, self.censor_high));
        }
        if self.beta2().len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: self.beta2().len() });
        }
        if let Some(z) = &self.fixed_covariates {
            if z.len() != self.dim() {
                return Err(Error::DimensionMismatch { expected: self.dim(), actual: z.len() });
            }
        }
        Ok(())
    }
}

/// `γk (1 − e^{−γl t})`.
pub fn gompertz_cum(gk: f64, gl: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(-gk * exp_m1(-gl * t))
}

fn gompertz(gk: f64, gl: f64, t: f64) -> f64 {
    -gk * exp_m1(-gl * t)
}

/// `F(t) = 1 − exp[−G(x)]`, accurate for small `x`.
fn one_minus_exp_neg(link: &LinkFunction, x: f64) -> f64 {
    -exp_m1(-link.g(x))
}

/// Solution of `G{e^{β2ᵀZ} γ3} = −log F1(∞|Z)` before capping.
pub fn gamma3_uncapped(cfg: &SimulationConfig, z: &[f64]) -> Result<f64> {
    // −log F1(∞) = −log(1 − e^{−G}), kept accurate when F1(∞) rounds to one.
    let g = cfg.link.g(exp(dot(&cfg.beta, z)) * cfg.gamma1);
    let target = -ln_1p(-exp(-g));
    if !(target > 0.0) {
        return Err(Error::InvalidArgument(format!("F1(inf|Z) = 1 (G = {g}) leaves no room for a terminal event")));
    }
    Ok(exp(-dot(cfg.beta2(), z)) * cfg.link.g_inverse(target))
}

/// Capped `γ3`.
pub fn gamma3_of(cfg: &SimulationConfig, z: &[f64]) -> Result<f64> {
    Ok(gamma3_uncapped(cfg, z)?.min(cfg.gamma3_cap))
}

/// Per-subject law of the next event.
#[derive(Debug, Clone)]
struct SubjectLaw<'a> {
    link: &'a LinkFunction,
    e1: f64,
    e2: f64,
    g1: f64,
    g2: f64,
    g3: f64,
    g4: f64,
    terminal: bool,
}

impl SubjectLaw<'_> {
    fn f1(&self, t: f64) -> f64 {
        one_minus_exp_neg(self.link, self.e1 * gompertz(self.g1, self.g2, t))
    }

    fn f2(&self, t: f64) -> f64 {
        if self.terminal {
            one_minus_exp_neg(self.link, self.e2 * gompertz(self.g3, self.g4, t))
        } else {
            0.0
        }
    }

    fn f(&self, kind: EventKind, t: f64) -> f64 {
        match kind {
            EventKind::Recurrent => self.f1(t),
            EventKind::Terminal => self.f2(t),
        }
    }
}

fn law<'a>(cfg: &'a SimulationConfig, z: &[f64]) -> Result<SubjectLaw<'a>> {
    Ok(SubjectLaw {
        link: &cfg.link,
        e1: exp(dot(&cfg.beta, z)),
        e2: exp(dot(cfg.beta2(), z)),
        g1: cfg.gamma1,
        g2: cfg.gamma2,
        g3: if cfg.terminal_events { gamma3_of(cfg, z)? } else { 0.0 },
        g4: cfg.gamma4,
        terminal: cfg.terminal_events,
    })
}

/// `F1(t|Z)` or `F2(t|Z)`; `t = ∞` gives the total mass.
pub fn subdist(cfg: &SimulationConfig, which: EventKind, z: &[f64], t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    Ok(law(cfg, z)?.f(which, t))
}

/// Smallest `t` in `[lo, hi]` with `F(t) ≥ target`, to `BISECTION_TOL`.
fn invert(law: &SubjectLaw<'_>, kind: EventKind, target: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..200 {
        if hi - lo <= BISECTION_TOL {
            return Ok(0.5 * (lo + hi));
        }
        let mid = 0.5 * (lo + hi);
        let v = law.f(kind, mid);
        if !v.is_finite() {
            return Err(Error::Bisection { lo, hi });
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Bisection { lo, hi })
}

/// Draws one subject. Covariates come first from the stream, then the
/// censoring time, then one type draw and one time draw per event.
pub fn simulate_subject<R: Rng + ?Sized>(cfg: &SimulationConfig, id: &str, rng: &mut R) -> Result<SubjectRecord> {
    let d = cfg.dim();
    let z: Vec<f64> = match &cfg.fixed_covariates {
        Some(z) => z.clone(),
        None => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let horizon = if cfg.random_censoring {
        let c = cfg.censor_low + (cfg.censor_high - cfg.censor_low) * rng.random::<f64>();
        c.min(cfg.tau)
    } else {
        cfg.tau
    };
    let law = law(cfg, &z)?;
    let f1_inf = law.f1(f64::INFINITY);
    let f2_inf = law.f2(f64::INFINITY);

    let mut recurrences = Vec::new();
    let mut terminal = None;
    let mut t = 0.0;
    loop {
        let (f1_t, f2_t) = (law.f1(t), law.f2(t));
        let surv = 1.0 - f1_t - f2_t;
        if !(surv > 0.0) {
            break;
        }
        let p1 = (f1_inf - f1_t) / surv;
        let p2 = (f2_inf - f2_t) / surv;
        let u: f64 = rng.random();
        let kind = if u < p1 {
            EventKind::Recurrent
        } else if u < p1 + p2 {
            EventKind::Terminal
        } else {
            break;
        };
        let (f_t, f_inf) = match kind {
            EventKind::Recurrent => (f1_t, f1_inf),
            EventKind::Terminal => (f2_t, f2_inf),
        };
        let v: f64 = rng.random();
        let target = f_t + v * (f_inf - f_t);
        if target > law.f(kind, horizon) {
            break;
        }
        let mut s = invert(&law, kind, target, t, horizon)?;
        if s <= t {
            s = t.next_up();
        }
        match kind {
            EventKind::Recurrent => {
                recurrences.push(s);
                t = s;
            }
            EventKind::Terminal => {
                terminal = Some(s);
                break;
            }
        }
    }
    let censor_time = terminal.unwrap_or(horizon);
    let mut record = SubjectRecord::with_constant_covariates(id, z, recurrences, terminal, censor_time);
    record.id = String::from(id);
    Ok(record)
}

/// Generator for subject `i` of a dataset with seed `seed`: ChaCha8 seeded
/// from `seed`, on stream `i`. Streams do not overlap, so datasets are the
/// same however the subjects are scheduled.
pub fn subject_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

pub fn simulate_dataset(cfg: &SimulationConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut subjects = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = subject_rng(cfg.seed, i as u64);
        subjects.push(simulate_subject(cfg, &format!("{}", i + 1), &mut rng)?);
    }
    Dataset::new(subjects, cfg.tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bc1() -> SimulationConfig {
        SimulationConfig::preset("scenario_bc_1").unwrap()
    }

    #[test]
    fn gompertz_anchors() {
        let v: Vec<f64> = [1.25, 2.5, 5.0].iter().map(|t| gompertz_cum(1.8, 0.2, *t).unwrap()).collect();
        assert_eq!(libm::round(v[0] * 1000.0), 398.0);
        assert_eq!(libm::round(v[1] * 1000.0), 708.0);
        assert_eq!(libm::round(v[2] * 1000.0), 1138.0);
        assert_eq!(gompertz_cum(3.0, 0.7, 0.0).unwrap(), 0.0);
        assert!(gompertz_cum(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn subdistribution_limits() {
        let cfg = bc1();
        let z = [0.4, -1.0];
        assert_eq!(subdist(&cfg, EventKind::Recurrent, &z, 0.0).unwrap(), 0.0);
        let inf = subdist(&cfg, EventKind::Recurrent, &z, f64::INFINITY).unwrap();
        let e = exp(0.4 + 0.5);
        assert_relative_eq!(inf, 1.0 - exp(-e * 1.8), epsilon = 1e-15);
        // Uncapped: total mass one.
        let mut open = cfg.clone();
        open.gamma3_cap = f64::INFINITY;
        let total = subdist(&open, EventKind::Recurrent, &z, f64::INFINITY).unwrap() + subdist(&open, EventKind::Terminal, &z, f64::INFINITY).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gamma3_examples() {
        // Identity link, Z = 0, F1(∞) = e^{−0.5}: G(γ3) = 0.5.
        let mut cfg = bc1();
        cfg.beta = vec![0.0];
        cfg.gamma1 = -libm::log(1.0 - exp(-0.5));
        assert_relative_eq!(gamma3_uncapped(&cfg, &[0.0]).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(gamma3_of(&cfg, &[0.0]).unwrap(), 0.3);
        // Logarithmic r = 1 with F1(∞) = 0.5: log(1 + γ3) = log 2.
        let mut cfg = SimulationConfig::preset("scenario_log_1").unwrap();
        cfg.beta = vec![0.0];
        cfg.gamma1 = cfg.link.g_inverse(core::f64::consts::LN_2);
        assert_relative_eq!(gamma3_uncapped(&cfg, &[0.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(gamma3_of(&cfg, &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn gamma3_solves_defining_equation() {
        for name in SimulationConfig::PRESETS {
            let cfg = SimulationConfig::preset(name).unwrap();
            for z in [[0.0, 0.0], [1.3, 0.2], [-2.0, 1.5]] {
                let g3 = gamma3_uncapped(&cfg, &z).unwrap();
                let lhs = exp(-cfg.link.g(exp(dot(cfg.beta2(), &z)) * g3));
                let f1 = subdist(&cfg, EventKind::Recurrent, &z, f64::INFINITY).unwrap();
                assert!((lhs - f1).abs() < 1e-10, "{name}");
            }
        }
    }

    #[test]
    fn conditional_law_is_monotone_and_bounded() {
        let cfg = bc1();
        let law = law(&cfg, &[0.5, 0.5]).unwrap();
        let t1 = 0.8;
        let surv = 1.0 - law.f1(t1) - law.f2(t1);
        let bound = (law.f1(f64::INFINITY) - law.f1(t1)) / surv;
        let mut prev = 0.0;
        for j in 1..200 {
            let t2 = t1 + j as f64 * 0.05;
            let c = (law.f1(t2) - law.f1(t1)) / surv;
            assert!(c >= prev && c <= bound);
            prev = c;
        }
    }

    #[test]
    fn same_seed_same_subject() {
        let cfg = bc1();
        let a = simulate_subject(&cfg, "1", &mut subject_rng(9, 3)).unwrap();
        let b = simulate_subject(&cfg, "1", &mut subject_rng(9, 3)).unwrap();
        assert_eq!(a, b);
        let c = simulate_subject(&cfg, "1", &mut subject_rng(9, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn datasets_are_reproducible_and_valid() {
        let mut cfg = bc1();
        cfg.n = 5;
        cfg.seed = 42;
        let a = simulate_dataset(&cfg).unwrap();
        assert_eq!(a, simulate_dataset(&cfg).unwrap());
        cfg.n = 0;
        assert_eq!(simulate_dataset(&cfg).unwrap().n(), 0);
        cfg.n = 300;
        let ds = simulate_dataset(&cfg).unwrap();
        for s in ds.subjects() {
            assert!(s.censor_time <= cfg.tau);
            if let Some(d) = s.terminal_time {
                assert!(s.recurrent_times.iter().all(|t| *t <= d));
            }
        }
    }

    #[test]
    fn disabled_terminal_events_and_censoring() {
        let mut cfg = bc1();
        cfg.terminal_events = false;
        cfg.random_censoring = false;
        cfg.n = 200;
        let ds = simulate_dataset(&cfg).unwrap();
        assert!(ds.subjects().iter().all(|s| s.terminal_time.is_none() && s.censor_time == cfg.tau));
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = bc1();
        cfg.gamma2 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = bc1();
        cfg.censor_high = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = bc1();
        cfg.beta2 = Some(vec![1.0]);
        assert!(cfg.validate().is_err());
    }
}
