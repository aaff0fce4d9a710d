//! Follow-up records for recurrent and terminal events.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math::{abs, sqrt};

/// Piece of a covariate path: `values` apply on `[start, next start)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateInterval {
    pub start: f64,
    pub values: Vec<f64>,
}

/// One subject's follow-up.
///
/// `censor_time` is the end of observation when no terminal event occurred.
/// For subjects with a terminal event the censoring time is not observed
/// and `censor_time` is conventionally set to `terminal_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub covariate_path: Vec<CovariateInterval>,
    pub recurrent_times: Vec<f64>,
    pub terminal_time: Option<f64>,
    pub censor_time: f64,
}

impl SubjectRecord {
    /// Subject with time-constant covariates.
    pub fn with_constant_covariates(
        id: impl Into<String>,
        covariates: Vec<f64>,
        recurrent_times: Vec<f64>,
        terminal_time: Option<f64>,
        censor_time: f64,
    ) -> Self {
        Self {
            id: id.into(),
            covariate_path: vec![CovariateInterval { start: 0.0, values: covariates }],
            recurrent_times,
            terminal_time,
            censor_time,
        }
    }

    /// `X_i = D_i ∧ C_i`, the end of observation.
    pub fn follow_up_end(&self) -> f64 {
        match self.terminal_time {
            Some(d) => d.min(self.censor_time),
            None => self.censor_time,
        }
    }

    pub fn has_terminal_event(&self) -> bool {
        self.terminal_time.is_some()
    }

    pub fn dim(&self) -> usize {
        self.covariate_path.first().map_or(0, |c| c.values.len())
    }

    /// Index of the covariate interval containing `t` (right-open intervals).
    #[inline]
    pub(crate) fn interval_index(&self, t: f64) -> usize {
        self.covariate_path.partition_point(|c| c.start <= t).saturating_sub(1)
    }
}

/// Covariate value `Z_i(t)`; the last interval extends to `tau`.
pub fn covariate_at(subject: &SubjectRecord, t: f64, tau: f64) -> Result<&[f64]> {
    if !(0.0..=tau).contains(&t) {
        return Err(Error::TimeOutOfRange { time: t, tau });
    }
    let idx = subject.interval_index(t);
    Ok(&subject.covariate_path[idx].values)
}

/// Validated collection of subjects with the recurrent-event grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<SubjectRecord>,
    tau: f64,
    d: usize,
    grid: Vec<f64>,
    multiplicity: Vec<usize>,
    event_index: Vec<Vec<usize>>,
    follow_up_count: Vec<usize>,
    warnings: Vec<String>,
}

impl Dataset {
    /// Validates the subjects and builds the grid of distinct recurrence
    /// times. Ties within one subject are broken by moving the later copy
    /// up by one ulp, with a warning.
    pub fn new(mut subjects: Vec<SubjectRecord>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive and finite, got {tau}")));
        }
        let d = subjects.first().map_or(0, SubjectRecord::dim);
        let mut warnings = Vec::new();
        for s in subjects.iter_mut() {
            validate_subject(s, tau, d, &mut warnings)?;
        }

        let mut grid: Vec<f64> = subjects.iter().flat_map(|s| s.recurrent_times.iter().copied()).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut multiplicity = vec![0usize; grid.len()];
        let mut event_index = Vec::with_capacity(subjects.len());
        let mut follow_up_count = Vec::with_capacity(subjects.len());
        for s in &subjects {
            let idx: Vec<usize> = s
                .recurrent_times
                .iter()
                .map(|t| grid.partition_point(|g| g < t))
                .collect();
            for &k in &idx {
                multiplicity[k] += 1;
            }
            event_index.push(idx);
            let end = s.follow_up_end().min(tau);
            follow_up_count.push(grid.partition_point(|g| *g <= end));
        }

        Ok(Self { subjects, tau, d, grid, multiplicity, event_index, follow_up_count, warnings })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Sorted distinct recurrence times.
    pub fn recurrent_grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.grid.len()
    }

    /// Number of recurrences at each grid time, `dN(t_k)`.
    pub fn multiplicity(&self) -> &[usize] {
        &self.multiplicity
    }

    /// Grid indices of subject `i`'s recurrences.
    pub fn event_indices(&self, i: usize) -> &[usize] {
        &self.event_index[i]
    }

    /// Number of grid times `t_k ≤ X_i ∧ τ`.
    pub fn follow_up_count(&self, i: usize) -> usize {
        self.follow_up_count[i]
    }

    pub fn total_recurrences(&self) -> usize {
        self.multiplicity.iter().sum()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Writes `βᵀZ_i(t_m)` for the first `out.len()` grid times.
    pub(crate) fn linear_predictor_on_grid(&self, i: usize, beta: &[f64], out: &mut [f64]) {
        let s = &self.subjects[i];
        let path = &s.covariate_path;
        let mut interval = 0usize;
        let mut current = dot(beta, &path[0].values);
        for (m, slot) in out.iter_mut().enumerate() {
            let t = self.grid[m];
            while interval + 1 < path.len() && path[interval + 1].start <= t {
                interval += 1;
                current = dot(beta, &path[interval].values);
            }
            *slot = current;
        }
    }

    /// Covariate vector of subject `i` at grid time `m`.
    #[inline]
    pub(crate) fn covariates_on_grid(&self, i: usize, m: usize) -> &[f64] {
        let s = &self.subjects[i];
        &s.covariate_path[s.interval_index(self.grid[m])].values
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn invalid(s: &SubjectRecord, message: impl Into<String>) -> Error {
    Error::InvalidSubject { subject: s.id.clone(), message: message.into() }
}

fn validate_subject(s: &mut SubjectRecord, tau: f64, d: usize, warnings: &mut Vec<String>) -> Result<()> {
    if s.covariate_path.is_empty() {
        return Err(invalid(s, "covariate path is empty"));
    }
    if s.covariate_path[0].start != 0.0 {
        return Err(invalid(s, "covariate path must start at time 0"));
    }
    for w in s.covariate_path.windows(2) {
        if !(w[1].start > w[0].start) {
            return Err(invalid(s, "covariate interval starts must be strictly increasing"));
        }
    }
    for c in &s.covariate_path {
        if c.values.len() != d {
            return Err(invalid(s, format!("expected {d} covariates, found {}", c.values.len())));
        }
        if c.values.iter().any(|v| !v.is_finite()) || !c.start.is_finite() {
            return Err(invalid(s, "non-finite covariate value"));
        }
    }
    if !(s.censor_time >= 0.0) || s.censor_time > tau {
        return Err(invalid(s, format!("censor time {} outside [0, {tau}]", s.censor_time)));
    }
    if let Some(dt) = s.terminal_time {
        if !(dt > 0.0) || dt > tau {
            return Err(invalid(s, format!("terminal time {dt} outside (0, {tau}]")));
        }
        if dt > s.censor_time {
            return Err(invalid(s, "terminal event after the end of follow-up"));
        }
    }

    let mut sorted = true;
    for w in s.recurrent_times.windows(2) {
        if w[1] < w[0] {
            sorted = false;
        }
    }
    if !sorted {
        s.recurrent_times.sort_by(f64::total_cmp);
    }
    for j in 1..s.recurrent_times.len() {
        if s.recurrent_times[j] <= s.recurrent_times[j - 1] {
            let bumped = s.recurrent_times[j - 1].next_up();
            warnings.push(format!(
                "subject {}: tied recurrence at {} moved to {}",
                s.id, s.recurrent_times[j], bumped
            ));
            s.recurrent_times[j] = bumped;
        }
    }
    let end = s.follow_up_end();
    for &t in &s.recurrent_times {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid(s, format!("recurrence time {t} must be positive")));
        }
        if t > end {
            let what = if s.terminal_time.is_some_and(|d| t > d) {
                "recurrence after terminal event"
            } else {
                "recurrence after end of follow-up"
            };
            return Err(invalid(s, format!("{what} ({t} > {end})")));
        }
    }
    Ok(())
}

/// Summary counts and warnings for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub subjects: usize,
    pub recurrences: usize,
    pub distinct_times: usize,
    pub terminal_events: usize,
    /// Random censorings strictly before `tau`.
    pub censorings: usize,
    pub max_abs_covariate: f64,
    pub covariate_rank: usize,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn terminal_fraction(&self) -> f64 {
        ratio(self.terminal_events, self.subjects)
    }

    pub fn censoring_fraction(&self) -> f64 {
        ratio(self.censorings, self.subjects)
    }

    pub fn mean_recurrences(&self) -> f64 {
        ratio(self.recurrences, self.subjects)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub const DEFAULT_COVARIATE_BOUND: f64 = 100.0;

pub fn diagnostics(ds: &Dataset) -> DiagnosticsReport {
    diagnostics_with_bound(ds, DEFAULT_COVARIATE_BOUND)
}

/// Counts, a covariate magnitude check against `bound`, and a rank check
/// of the centred covariate rows observed during follow-up. Constant
/// columns count as rank deficient because the baseline absorbs them.
pub fn diagnostics_with_bound(ds: &Dataset, bound: f64) -> DiagnosticsReport {
    let d = ds.dim();
    let mut warnings: Vec<String> = ds.warnings().to_vec();
    let mut terminal_events = 0;
    let mut censorings = 0;
    let mut max_abs: f64 = 0.0;
    let mut rows: Vec<&[f64]> = Vec::new();
    for s in ds.subjects() {
        if s.has_terminal_event() {
            terminal_events += 1;
        } else if s.censor_time < ds.tau() {
            censorings += 1;
        }
        let end = s.follow_up_end();
        for (j, c) in s.covariate_path.iter().enumerate() {
            if j > 0 && c.start > end {
                break;
            }
            for v in &c.values {
                max_abs = max_abs.max(abs(*v));
            }
            rows.push(&c.values);
        }
    }
    if max_abs > bound {
        warnings.push(format!("covariate magnitude {max_abs} exceeds bound {bound}"));
    }

    let mut rank = 0;
    if d > 0 && !rows.is_empty() {
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows.len() as f64;
        }
        let mut gram = Matrix::zeros(d, d);
        for r in &rows {
            for a in 0..d {
                let ra = r[a] - mean[a];
                for b in 0..d {
                    gram[(a, b)] += ra * (r[b] - mean[b]);
                }
            }
        }
        rank = numerical_rank(&gram);
        if rank < d {
            warnings.push(format!(
                "covariate matrix is rank deficient (rank {rank} of {d}); coefficients are not identifiable"
            ));
        }
    }

    DiagnosticsReport {
        subjects: ds.n(),
        recurrences: ds.total_recurrences(),
        distinct_times: ds.k(),
        terminal_events,
        censorings,
        max_abs_covariate: max_abs,
        covariate_rank: rank,
        warnings,
    }
}

/// Rank of a symmetric positive semidefinite matrix by pivoted Cholesky.
fn numerical_rank(gram: &Matrix) -> usize {
    let d = gram.rows();
    let mut a = gram.clone();
    let scale = (0..d).map(|i| a[(i, i)]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return 0;
    }
    let tol = 1e-10 * scale;
    let mut used = vec![false; d];
    let mut rank = 0;
    for _ in 0..d {
        let Some(p) = (0..d).filter(|&i| !used[i]).max_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)])) else {
            break;
        };
        let piv = a[(p, p)];
        if piv <= tol {
            break;
        }
        used[p] = true;
        rank += 1;
        let root = sqrt(piv);
        let col: Vec<f64> = (0..d).map(|i| a[(i, p)] / root).collect();
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] -= col[i] * col[j];
            }
        }
    }
    rank
}

impl core::fmt::Display for DiagnosticsReport {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "subjects: {}", self.subjects)?;
        writeln!(f, "recurrences: {} ({} distinct times)", self.recurrences, self.distinct_times)?;
        writeln!(
            f,
            "terminal events: {} ({:.1}%)",
            self.terminal_events,
            100.0 * self.terminal_fraction()
        )?;
        writeln!(f, "censorings: {} ({:.1}%)", self.censorings, 100.0 * self.censoring_fraction())?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
