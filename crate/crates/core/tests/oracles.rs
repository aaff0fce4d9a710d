//! Cross-checks of the estimator against independently coded formulas.

use remm_core::linalg::Matrix;
use remm_core::*;

fn scenario(n: usize, seed: u64, terminal: bool, censoring: bool) -> Dataset {
    let mut cfg = SimulationConfig::preset("scenario_bc_1").unwrap();
    cfg.n = n;
    cfg.seed = seed;
    cfg.terminal_events = terminal;
    cfg.random_censoring = censoring;
    simulate_dataset(&cfg).unwrap()
}

fn prepare(ds: &Dataset) -> (CensoringSurvival, WeightContext) {
    let gc = km_censoring(ds).unwrap();
    let wc = ipc_weights(ds, &gc).unwrap();
    (gc, wc)
}

fn inverse2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn sandwich2(a_inv: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[i][j] += a_inv[i][k] * b[k][l] * a_inv[l][j];
                }
            }
        }
    }
    out
}

/// Robust variance of the Andersen–Gill partial likelihood (Lin, Wei, Yang
/// and Ying) with constant covariates and full follow-up to tau.
fn lwyy(ds: &Dataset, beta: &[f64]) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let grid = ds.recurrent_grid();
    let z: Vec<[f64; 2]> = ds.subjects().iter().map(|s| [s.covariate_path[0].values[0], s.covariate_path[0].values[1]]).collect();
    let e: Vec<f64> = z.iter().map(|z| (beta[0] * z[0] + beta[1] * z[1]).exp()).collect();
    let s0: f64 = e.iter().sum();
    let s1 = [0, 1].map(|a| e.iter().zip(&z).map(|(e, z)| e * z[a]).sum::<f64>());
    let zbar = [s1[0] / s0, s1[1] / s0];
    let mut info = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let s2: f64 = e.iter().zip(&z).map(|(e, z)| e * z[a] * z[b]).sum();
            info[a][b] = ds.total_recurrences() as f64 * (s2 / s0 - zbar[a] * zbar[b]);
        }
    }
    // Everyone is at risk throughout, so dΛ̂ = dN/S0 and the compensator of
    // subject i over [0, tau] is e_i N/S0.
    let total = grid.len();
    assert!(total > 0);
    let big_n = ds.total_recurrences() as f64;
    let mut meat = [[0.0; 2]; 2];
    for (i, s) in ds.subjects().iter().enumerate() {
        let ni = s.recurrent_times.len() as f64;
        let u = [0, 1].map(|a| (z[i][a] - zbar[a]) * (ni - e[i] * big_n / s0));
        for a in 0..2 {
            for b in 0..2 {
                meat[a][b] += u[a] * u[b];
            }
        }
    }
    let a_inv = inverse2(info);
    (sandwich2(a_inv, meat), a_inv)
}

#[test]
fn sandwich_matches_robust_andersen_gill_variance() {
    for seed in [3, 4] {
        let ds = scenario(150, seed, false, false);
        let (gc, wc) = prepare(&ds);
        let link = LinkFunction::identity();
        let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        let vr = sandwich(&fit, &ds, &wc, &gc, &link).unwrap();
        let (robust, model) = lwyy(&ds, &fit.beta_hat);
        for a in 0..2 {
            assert!((vr.beta_se[a] - robust[a][a].sqrt()).abs() < 1e-6 * robust[a][a].sqrt(), "{} vs {}", vr.beta_se[a], robust[a][a].sqrt());
            assert!((vr.fisher_only_se[a] - model[a][a].sqrt()).abs() < 1e-6 * model[a][a].sqrt());
        }
    }
}

/// Robust and model-based variances of the Breslow estimator at `t` in the
/// same setting: `ψ_i(t) = M_i(t)/S0 − H(t)ᵀ I⁻¹ U_i`.
fn breslow_variance(ds: &Dataset, beta: &[f64], t: f64) -> (f64, f64) {
    let z: Vec<[f64; 2]> = ds.subjects().iter().map(|s| [s.covariate_path[0].values[0], s.covariate_path[0].values[1]]).collect();
    let e: Vec<f64> = z.iter().map(|z| (beta[0] * z[0] + beta[1] * z[1]).exp()).collect();
    let s0: f64 = e.iter().sum();
    let zbar = [0, 1].map(|a| e.iter().zip(&z).map(|(e, z)| e * z[a]).sum::<f64>() / s0);
    let count = |s: &SubjectRecord, upto: f64| s.recurrent_times.iter().filter(|r| **r <= upto).count() as f64;
    let nbar_t: f64 = ds.subjects().iter().map(|s| count(s, t)).sum();
    let nbar: f64 = ds.total_recurrences() as f64;
    let (_, a_inv) = lwyy(ds, beta);
    let h = zbar.map(|zb| zb * nbar_t / s0);
    let hai = [0, 1].map(|b| h[0] * a_inv[0][b] + h[1] * a_inv[1][b]);
    let robust: f64 = ds
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let u = [0, 1].map(|a| (z[i][a] - zbar[a]) * (count(s, f64::INFINITY) - e[i] * nbar / s0));
            let psi = (count(s, t) - e[i] * nbar_t / s0) / s0 - (hai[0] * u[0] + hai[1] * u[1]);
            psi * psi
        })
        .sum();
    let model = nbar_t / (s0 * s0) + hai[0] * h[0] + hai[1] * h[1];
    (robust, model)
}

#[test]
fn baseline_sandwich_matches_robust_breslow_variance() {
    for seed in [3, 4] {
        let ds = scenario(150, seed, false, false);
        let (gc, wc) = prepare(&ds);
        let link = LinkFunction::identity();
        let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
        let vr = sandwich(&fit, &ds, &wc, &gc, &link).unwrap();
        for t in [1.25, 2.5, 5.0] {
            let (robust, model) = breslow_variance(&ds, &fit.beta_hat, t);
            let (se_s, se_f) = vr.baseline_se(t);
            assert!((se_s - robust.sqrt()).abs() < 1e-6 * robust.sqrt(), "t={t}: {se_s} vs {}", robust.sqrt());
            assert!((se_f - model.sqrt()).abs() < 1e-6 * model.sqrt(), "t={t}: {se_f} vs {}", model.sqrt());
        }
    }
}

#[test]
fn ghosh_lin_equals_identity_npmle_on_simulated_data() {
    for seed in 10..14 {
        let ds = scenario(200, seed, true, true);
        let (_, wc) = prepare(&ds);
        let fit = fit_npmle_weighted(&ds, &wc, &LinkFunction::identity(), &SolverOptions::default()).unwrap();
        let gl = ghosh_lin_fit(&ds, &wc).unwrap();
        for (a, b) in fit.beta_hat.iter().zip(&gl) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }
}

#[test]
fn family_limits_agree() {
    let ds = scenario(120, 21, true, true);
    let (_, wc) = prepare(&ds);
    let opts = SolverOptions::default();
    for (a, b) in [
        (LinkFunction::box_cox(1.0).unwrap(), LinkFunction::logarithmic(1e-8).unwrap()),
        (LinkFunction::logarithmic(1.0).unwrap(), LinkFunction::box_cox(1e-8).unwrap()),
    ] {
        let fa = fit_npmle_weighted(&ds, &wc, &a, &opts).unwrap();
        let fb = fit_npmle_weighted(&ds, &wc, &b, &opts).unwrap();
        assert!((fa.loglik - fb.loglik).abs() < 1e-6);
        for (x, y) in fa.beta_hat.iter().zip(&fb.beta_hat) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn kappa_vanishes_without_terminal_events_or_random_censoring() {
    let link = LinkFunction::box_cox(0.5).unwrap();
    for (terminal, censoring) in [(false, true), (true, false)] {
        let ds = scenario(80, 5, terminal, censoring);
        let (gc, wc) = prepare(&ds);
        let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
        let kappa = kappa_components(&fit, &ds, &wc, &gc, &link).unwrap();
        assert!(kappa.as_slice().iter().all(|v| *v == 0.0));
    }
    // Both present: the correction is active.
    let ds = scenario(80, 5, true, true);
    let (gc, wc) = prepare(&ds);
    let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
    let kappa = kappa_components(&fit, &ds, &wc, &gc, &link).unwrap();
    assert!(kappa.as_slice().iter().any(|v| *v != 0.0));
}

#[test]
fn stored_covariance_reproduces_prediction_errors() {
    let ds = scenario(100, 8, true, true);
    let (gc, wc) = prepare(&ds);
    let link = LinkFunction::box_cox(0.5).unwrap();
    let fit = fit_npmle_weighted(&ds, &wc, &link, &SolverOptions::default()).unwrap();
    let vr = sandwich(&fit, &ds, &wc, &gc, &link).unwrap();
    let profile = vec![CovariateInterval { start: 0.0, values: vec![0.5, -1.0] }];
    let times = [0.0, 1.0, 2.5, 5.0];
    let a = predict_marginal_mean(&fit, Some(&vr), &profile, &times, BandScale::Linear).unwrap();
    let cov: Matrix = vr.covariance();
    let b = predict_with_covariance(&fit, &cov, &profile, &times, BandScale::Linear).unwrap();
    assert_eq!(a.mean, b.mean);
    for (x, y) in a.se.iter().zip(&b.se) {
        assert!((x - y).abs() <= 1e-9 * x.max(1e-12));
    }
    assert_eq!(a.se[0], 0.0);
    assert!(a.mean.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn nelson_aalen_degeneration_on_simulated_data() {
    let ds = scenario(300, 2, false, false);
    let (_, wc) = prepare(&ds);
    let mut subjects = ds.subjects().to_vec();
    for s in &mut subjects {
        for iv in &mut s.covariate_path {
            iv.values.clear();
        }
    }
    let bare = Dataset::new(subjects, ds.tau()).unwrap();
    let fit = fit_npmle_weighted(&bare, &wc, &LinkFunction::identity(), &SolverOptions::default()).unwrap();
    for (m, size) in fit.jump_sizes.iter().enumerate() {
        let expected = ds.multiplicity()[m] as f64 / ds.n() as f64;
        assert!((size - expected).abs() < 1e-8);
    }
    let na = nelson_aalen_pseudo(&ds, &wc).unwrap();
    let aj = aalen_johansen_marginal_mean(&ds).unwrap();
    for t in [0.5, 1.0, 3.0, 5.0] {
        assert!((na.value_at(t) - aj.value_at(t)).abs() < 1e-12);
    }
}

#[test]
fn aic_counts_jumps() {
    let ds = scenario(60, 9, true, true);
    let fit = fit_npmle(&ds, &LinkFunction::identity(), &SolverOptions::default()).unwrap();
    let p = (fit.beta_hat.len() + fit.jump_sizes.len()) as f64;
    assert!((fit.aic() - (-2.0 * fit.loglik + 2.0 * p)).abs() < 1e-9);
}
