//! Ascent solvers: limited-memory BFGS with Armijo backtracking, and a
//! Newton step on a concave quadratic model with a ridge fallback.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::Result;
use crate::linalg::{Cholesky, Matrix};
use crate::math::abs;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `max |g| < grad_tol`.
    pub grad_tol: f64,
    /// Stop when the relative objective change falls below this twice in a row.
    pub rel_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 500, grad_tol: 1e-5, rel_tol: 1e-12, armijo: 1e-4, max_backtracks: 60 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentState {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(abs(*x)))
}

/// Whether a trial point is acceptable for an ascent method: it must not
/// decrease the objective, except by rounding noise when it also shrinks the
/// gradient. Near the optimum the exact gain drops below the rounding error
/// of a long sum, and the gradient is the only reliable signal left.
pub fn accept_step(value: f64, grad: &[f64], trial_value: f64, trial_grad: &[f64]) -> bool {
    if !trial_value.is_finite() {
        return false;
    }
    if trial_value >= value {
        return true;
    }
    let noise = 1e-12 * abs(value).max(1.0);
    trial_value >= value - noise && max_abs(trial_grad) < max_abs(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `f`, which returns the value and gradient. Evaluation errors
/// during the line search are treated as `−∞` and trigger backtracking.
/// Accepted steps never decrease the objective.
pub fn lbfgs_maximize<F>(x0: Vec<f64>, mut f: F, opts: &LbfgsOptions) -> Result<AscentState>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, gradient) = f(&x0)?;
    let mut st = AscentState { x: x0, value, gradient, iterations: 0 };
    // Pairs (s, y, 1/yᵀs) for the minimization of −f.
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut small_changes = 0;
    let n = st.x.len();

    while st.iterations < opts.max_iter && max_abs(&st.gradient) >= opts.grad_tol {
        st.iterations += 1;
        // Two-loop recursion on q = ∇(−f) = −g gives a descent direction for −f.
        let mut q: Vec<f64> = st.gradient.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in &mut q {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        // Ascent direction for f.
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&st.gradient, &dir);
        if !(slope > 0.0) {
            pairs.clear();
            dir = st.gradient.clone();
            slope = dot(&dir, &dir);
        }
        let mut step = if pairs.is_empty() { 1.0f64.min(1.0 / max_abs(&dir).max(1e-300)) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial: Vec<f64> = st.x.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            if let Ok((v, g)) = f(&trial) {
                if v.is_finite() && v >= st.value + opts.armijo * step * slope {
                    accepted = Some((trial, v, g));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = accepted else {
            break;
        };

        let s: Vec<f64> = (0..n).map(|j| x_new[j] - st.x[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| st.gradient[j] - g_new[j]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(1e-300) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let change = abs(v_new - st.value) / abs(v_new).max(1.0);
        st.x = x_new;
        st.value = v_new;
        st.gradient = g_new;
        if change < opts.rel_tol {
            small_changes += 1;
            if small_changes >= 2 {
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    Ok(st)
}

/// Newton direction `p` solving `(−H + μI) p = g` for the smallest ridge
/// `μ` in `{0, 1e-10·s, 1e-8·s, …}` that makes the system positive
/// definite, with `s` the largest diagonal magnitude.
pub fn newton_direction(gradient: &[f64], hessian: &Matrix) -> Option<Vec<f64>> {
    let n = gradient.len();
    let mut neg = hessian.clone();
    neg.scale(-1.0);
    let s = neg.diagonal().iter().fold(1e-300f64, |m, v| m.max(abs(*v)));
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = neg.clone();
        for j in 0..n {
            m[(j, j)] += ridge;
        }
        if let Ok(ch) = Cholesky::new(&m) {
            return Some(ch.solve(gradient));
        }
        ridge = if ridge == 0.0 { 1e-10 * s } else { ridge * 100.0 };
    }
    None
}

/// Backtracking Newton ascent from `x0`; `f` returns value, gradient and
/// Hessian. Stops when both `max |g| < grad_tol` and the relative change is
/// below `rel_tol`, or when no ascent step is found.
pub fn newton_maximize<F>(x0: Vec<f64>, mut f: F, grad_tol: f64, rel_tol: f64, max_iter: usize) -> Result<AscentState>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>, Option<Matrix>)>,
{
    let (mut value, mut gradient, mut hess) = f(&x0, true)?;
    let mut x = x0;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    while iterations < max_iter {
        if max_abs(&gradient) < grad_tol && last_change < rel_tol {
            break;
        }
        let Some(h) = hess.take() else { break };
        let Some(dir) = newton_direction(&gradient, &h) else { break };
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            // The full step is usually accepted, so ask for its Hessian up front.
            if let Ok((v, g, h)) = f(&trial, step == 1.0) {
                if accept_step(value, &gradient, v, &g) {
                    accepted = Some((trial, v, g, h));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, vn, gn, hn)) = accepted else { break };
        last_change = abs(vn - value) / abs(vn).max(1.0);
        let (v2, g2, h2) = match hn {
            Some(h) => (vn, gn, Some(h)),
            None => f(&xn, true)?,
        };
        x = xn;
        value = v2;
        gradient = g2;
        hess = h2;
        if last_change == 0.0 && max_abs(&gradient) >= grad_tol {
            // No further progress possible in floating point.
            break;
        }
    }
    Ok(AscentState { x, value, gradient, iterations })
}
