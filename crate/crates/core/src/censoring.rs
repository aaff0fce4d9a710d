//! Kaplan–Meier estimate of the censoring distribution and the inverse
//! probability of censoring weights of the pseudo risk set.
//!
//! Terminal events censor the censoring process, and administrative
//! censoring at `tau` is not a censoring event. Weights evaluate `Ĝ_c` by
//! its left limit, so a censoring at exactly a recurrence time does not
//! deflate the weight of that recurrence.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CensoringSurvival {
    /// Distinct observed censoring times.
    pub jump_times: Vec<f64>,
    /// `Ĝ_c` just after each jump.
    pub values: Vec<f64>,
    /// Nelson–Aalen cumulative censoring hazard `Â^c` at each jump.
    pub nelson_aalen_censoring: Vec<f64>,
    /// Subjects with follow-up end `≥ u` at each jump.
    pub at_risk: Vec<usize>,
    /// Censorings at each jump.
    pub counts: Vec<usize>,
}

impl CensoringSurvival {
    /// `Ĝ_c(t)`, right-continuous.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|u| *u <= t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    /// `Ĝ_c(t−)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|u| *u < t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    /// Increments `dÂ^c(u) = c(u)/R(u)` at each jump.
    pub fn hazard_increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.counts.iter().zip(&self.at_risk).map(|(c, r)| *c as f64 / *r as f64)
    }
}

/// Whether a subject's follow-up ended by random censoring before `tau`.
pub(crate) fn is_censored(ds: &Dataset, i: usize) -> bool {
    let s = &ds.subjects()[i];
    !s.has_terminal_event() && s.censor_time < ds.tau()
}

/// `X_i ∧ τ`.
pub(crate) fn follow_up(ds: &Dataset, i: usize) -> f64 {
    ds.subjects()[i].follow_up_end().min(ds.tau())
}

pub fn km_censoring(ds: &Dataset) -> Result<CensoringSurvival> {
    let n = ds.n();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut ends: Vec<f64> = (0..n).map(|i| follow_up(ds, i)).collect();
    ends.sort_by(f64::total_cmp);
    let mut censored: Vec<f64> = (0..n).filter(|&i| is_censored(ds, i)).map(|i| follow_up(ds, i)).collect();
    censored.sort_by(f64::total_cmp);

    let mut out = CensoringSurvival {
        jump_times: Vec::new(),
        values: Vec::new(),
        nelson_aalen_censoring: Vec::new(),
        at_risk: Vec::new(),
        counts: Vec::new(),
    };
    let mut surv = 1.0;
    let mut cum = 0.0;
    let mut j = 0;
    while j < censored.len() {
        let u = censored[j];
        let mut c = 0;
        while j < censored.len() && censored[j] == u {
            c += 1;
            j += 1;
        }
        let at_risk = n - ends.partition_point(|x| *x < u);
        surv *= 1.0 - c as f64 / at_risk as f64;
        cum += c as f64 / at_risk as f64;
        out.jump_times.push(u);
        out.values.push(surv);
        out.nelson_aalen_censoring.push(cum);
        out.at_risk.push(at_risk);
        out.counts.push(c);
    }
    Ok(out)
}

/// IPC weights on the recurrent-event grid.
///
/// Stored per subject rather than as a dense `n × k` matrix: a subject
/// without a terminal event has weight `1{t ≤ C_i ∧ τ}`, and a subject with
/// a terminal event at `D_i` has weight one up to `D_i` and
/// `Ĝ_c(t−)/Ĝ_c(D_i−)` afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContext {
    grid: Vec<f64>,
    gc: CensoringSurvival,
    gc_left_on_grid: Vec<f64>,
    follow_up_count: Vec<usize>,
    follow_up: Vec<f64>,
    /// `Ĝ_c(D_i−)` for subjects with a terminal event.
    terminal_denominator: Vec<Option<f64>>,
}

pub fn ipc_weights(ds: &Dataset, gc: &CensoringSurvival) -> Result<WeightContext> {
    let grid = ds.recurrent_grid().to_vec();
    let gc_left_on_grid = grid.iter().map(|&t| gc.left_limit(t)).collect();
    let mut terminal_denominator = Vec::with_capacity(ds.n());
    for (i, s) in ds.subjects().iter().enumerate() {
        match s.terminal_time {
            Some(d) => {
                let g = gc.left_limit(d);
                let needed = ds.follow_up_count(i) < grid.len();
                if needed && !(g > 0.0) {
                    return Err(Error::ZeroCensoringSurvival { subject: s.id.clone(), time: d });
                }
                terminal_denominator.push(Some(g));
            }
            None => terminal_denominator.push(None),
        }
    }
    Ok(WeightContext {
        grid,
        gc: gc.clone(),
        gc_left_on_grid,
        follow_up_count: (0..ds.n()).map(|i| ds.follow_up_count(i)).collect(),
        follow_up: (0..ds.n()).map(|i| follow_up(ds, i)).collect(),
        terminal_denominator,
    })
}

impl WeightContext {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.follow_up.len()
    }

    pub fn censoring(&self) -> &CensoringSurvival {
        &self.gc
    }

    /// `w_i(t_k)`.
    #[inline]
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        if k < self.follow_up_count[i] {
            return 1.0;
        }
        match self.terminal_denominator[i] {
            Some(den) => self.gc_left_on_grid[k] / den,
            None => 0.0,
        }
    }

    /// `w*_i(t_k) = Ĝ_c(t_k−)/Ĝ_c(D_i−)`, defined for subjects with a terminal event.
    #[inline]
    pub fn simplified(&self, i: usize, k: usize) -> Option<f64> {
        self.terminal_denominator[i].map(|den| self.gc_left_on_grid[k] / den)
    }

    pub fn has_terminal(&self, i: usize) -> bool {
        self.terminal_denominator[i].is_some()
    }

    /// Number of grid times inside subject `i`'s follow-up.
    pub fn follow_up_count(&self, i: usize) -> usize {
        self.follow_up_count[i]
    }

    /// Number of grid times at which subject `i` carries nonzero weight.
    pub fn support_len(&self, i: usize) -> usize {
        if self.terminal_denominator[i].is_some() {
            self.grid.len()
        } else {
            self.follow_up_count[i]
        }
    }

    /// `Ĝ_c(t_k−)` on the grid.
    pub fn gc_left_on_grid(&self) -> &[f64] {
        &self.gc_left_on_grid
    }

    /// Dense `n × k` weight matrix, for inspection and dumps.
    pub fn weights_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| (0..self.grid.len()).map(|k| self.weight(i, k)).collect()).collect()
    }

    /// Dense `n × k` matrix of simplified weights; rows of subjects without a
    /// terminal event are zero.
    pub fn simplified_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.grid.len()).map(|k| self.simplified(i, k).unwrap_or(0.0)).collect())
            .collect()
    }

    /// Pseudo risk set size at every grid time in `O(n + k)`.
    pub fn pseudo_risk_sizes(&self) -> Vec<f64> {
        let k = self.grid.len();
        // count[j]: subjects whose weight-one region covers exactly j grid times.
        let mut ones_end = vec![0usize; k + 1];
        let mut terminal_start = vec![0.0f64; k + 1];
        for i in 0..self.n() {
            ones_end[self.follow_up_count[i]] += 1;
            if let Some(den) = self.terminal_denominator[i] {
                if self.follow_up_count[i] < k {
                    terminal_start[self.follow_up_count[i]] += 1.0 / den;
                }
            }
        }
        let mut out = vec![0.0; k];
        let mut still_one = self.n();
        let mut inv_sum = 0.0;
        for (m, slot) in out.iter_mut().enumerate() {
            still_one -= ones_end[m];
            inv_sum += terminal_start[m];
            *slot = still_one as f64 + self.gc_left_on_grid[m] * inv_sum;
        }
        out
    }
}

/// Expected number of subjects in the pseudo risk set at `t`:
/// `Σ_i 1{D_i ≥ t} + Σ_i 1{D_i < t} Ĝ_c(t−)/Ĝ_c(D_i−)`, where subjects
/// without a terminal event count while `C_i ∧ τ ≥ t`.
pub fn pseudo_risk_size(wc: &WeightContext, t: f64) -> f64 {
    let g_t = wc.gc.left_limit(t);
    (0..wc.n())
        .map(|i| {
            if wc.follow_up[i] >= t {
                1.0
            } else {
                match wc.terminal_denominator[i] {
                    Some(den) => g_t / den,
                    None => 0.0,
                }
            }
        })
        .sum()
}

impl core::fmt::Display for CensoringSurvival {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (t, g) in self.jump_times.iter().zip(&self.values) {
            writeln!(f, "{t}\t{g}")?;
        }
        Ok(())
    }
}

#[allow(dead_code)]
fn describe(wc: &WeightContext) -> alloc::string::String {
    format!("{} subjects on {} grid times", wc.n(), wc.grid.len())
}
