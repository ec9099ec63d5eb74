mod common;

use common::{discrete_instance, enumerate_projection, invert_dense, solve_dense, toy};
use nalgebra::DMatrix;
use pcause::estimator::{
    bootstrap_covariance, estimating_equation, gamma_plugin, influence_contribution, jacobian_m,
    odds_of_causation, odds_ratio, plugin_projection, predict_pc_with_ci, pseudo_outcome,
    sandwich_covariance, solve_beta, z_quantile, ProjectionFit, SolveOptions,
};
use pcause::{
    Beta, Dataset, Error, Eta, NuisanceConfig, NuisanceFit, Observation, RegressorSpec,
    Weight, WorkingModelSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

/// Pseudo-outcome written out directly from its definition.
fn xi(a: f64, y: f64, pi: f64, mu0: f64, mu1: f64) -> f64 {
    let gamma = 1.0 - mu0 / mu1;
    gamma + (mu0 / mu1) * (a * (y - mu1) / pi) / mu1 - (1.0 - a) * (y - mu0) / ((1.0 - pi) * mu1)
}

fn design_rows(ds: &Dataset) -> Vec<Vec<f64>> {
    ds.observations()
        .iter()
        .map(|o| std::iter::once(1.0).chain(o.covariates.iter().copied()).collect())
        .collect()
}

fn pseudo_outcomes(ds: &Dataset, nf: &NuisanceFit) -> Vec<f64> {
    ds.observations()
        .iter()
        .enumerate()
        .map(|(i, o)| xi(o.a(), o.y(), nf.pi_hat[i], nf.mu0_hat[i], nf.mu1_hat[i]))
        .collect()
}

fn wls(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for ((r, &v), &wi) in x.iter().zip(y).zip(w) {
        for a in 0..p {
            xty[a] += wi * r[a] * v;
            for b in 0..p {
                xtx[a][b] += wi * r[a] * r[b];
            }
        }
    }
    solve_dense(xtx, xty)
}

#[test]
fn gamma_plugin_examples() {
    assert_eq!(gamma_plugin(0.3, 0.3), 0.0);
    assert!((gamma_plugin(0.1, 0.5) - 0.8).abs() < 1e-15);
    let beta0 = 0.5;
    assert!((gamma_plugin(beta0 / 2.0, beta0) - 0.5).abs() < 1e-15);
}

#[test]
fn influence_contribution_vanishes_when_residuals_do() {
    let spec = WorkingModelSpec::identity();
    let eta = Eta { pi: 0.4, mu0: 0.2, mu1: 0.6 };
    let gamma = gamma_plugin(0.2, 0.6);
    let beta = Beta::new(vec![gamma, 0.0]).unwrap();
    // Y equal to the regression value is not binary, so check the algebra
    // through the pseudo-outcome with fractional outcomes.
    assert!((pseudo_outcome(1.0, 0.6, eta) - gamma).abs() < 1e-15);
    assert!((pseudo_outcome(0.0, 0.2, eta) - gamma).abs() < 1e-15);
    let z = Observation::new(vec![0.7], 1, 1).unwrap();
    let phi = influence_contribution(&z, &beta, eta, &spec).unwrap();
    let want = xi(1.0, 1.0, 0.4, 0.2, 0.6) - gamma;
    assert!((phi[0] - want).abs() < 1e-14 && (phi[1] - 0.7 * want).abs() < 1e-14);
}

#[test]
fn closed_form_weighted_least_squares() {
    for seed in 0..5 {
        let t = toy(400, seed);
        let weight = Weight::custom(|x: &[f64]| 1.0 + x[0] * x[0]);
        let spec = WorkingModelSpec::identity().with_weight(weight);
        let fit = solve_beta(&t.ds, &t.truth, &spec, None, &opts()).unwrap();
        let x = design_rows(&t.ds);
        let w: Vec<f64> = t.ds.observations().iter().map(|o| 1.0 + o.covariates[0].powi(2)).collect();
        let want = wls(&x, &pseudo_outcomes(&t.ds, &t.truth), &w);
        for (a, b) in fit.beta_hat.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn intercept_only_identity_is_mean_pseudo_outcome() {
    let t = toy(300, 11);
    let ds = t.ds.select_columns::<&str>(&[]).unwrap();
    let fit = solve_beta(&ds, &t.truth, &WorkingModelSpec::identity(), None, &opts()).unwrap();
    let xi = pseudo_outcomes(&t.ds, &t.truth);
    let mean = xi.iter().sum::<f64>() / xi.len() as f64;
    assert!((fit.beta_hat[0] - mean).abs() < 1e-12);
}

#[test]
fn intercept_only_logistic_has_negative_derivative() {
    let t = toy(500, 12);
    let ds = t.ds.select_columns::<&str>(&[]).unwrap();
    let fit = solve_beta(&ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    assert_eq!(fit.m_hat.shape(), (1, 1));
    assert!(fit.m_hat[(0, 0)] < 0.0);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (k, spec) in [WorkingModelSpec::logistic(), WorkingModelSpec::identity()].iter().enumerate() {
        for seed in 0..10 {
            let t = toy(200, 1000 + 10 * k as u64 + seed);
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let beta = Beta::new(b.clone()).unwrap();
            let m = jacobian_m(&beta, &t.ds, &t.truth, spec).unwrap();
            let scale = m.amax();
            for j in 0..3 {
                let hstep = 1e-5 * b[j].abs().max(1.0);
                let mut up = b.clone();
                let mut dn = b.clone();
                up[j] += hstep;
                dn[j] -= hstep;
                let fu = estimating_equation(&Beta::new(up).unwrap(), &t.ds, &t.truth, spec).unwrap();
                let fd = estimating_equation(&Beta::new(dn).unwrap(), &t.ds, &t.truth, spec).unwrap();
                for i in 0..3 {
                    let num = (fu[i] - fd[i]) / (2.0 * hstep);
                    let an = m[(i, j)];
                    let err = (an - num).abs() / an.abs().max(1e-3 * scale);
                    assert!(err < 1e-5, "entry ({i},{j}): analytic {an} numeric {num}");
                }
            }
        }
    }
}

#[test]
fn identity_jacobian_is_negative_gram() {
    let t = toy(100, 5);
    let m = jacobian_m(&Beta::zeros(3), &t.ds, &t.truth, &WorkingModelSpec::identity()).unwrap();
    let x = design_rows(&t.ds);
    for a in 0..3 {
        for b in 0..3 {
            let g: f64 = x.iter().map(|r| r[a] * r[b]).sum::<f64>() / 100.0;
            assert!((m[(a, b)] + g).abs() < 1e-12);
        }
    }
}

#[test]
fn sandwich_matches_heteroskedasticity_robust_covariance() {
    let t = toy(600, 21);
    let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::identity(), None, &opts()).unwrap();
    let x = design_rows(&t.ds);
    let y = pseudo_outcomes(&t.ds, &t.truth);
    let n = x.len() as f64;
    let b = wls(&x, &y, &vec![1.0; x.len()]);
    let mut bread = vec![vec![0.0; 3]; 3];
    let mut meat = vec![vec![0.0; 3]; 3];
    for (r, v) in x.iter().zip(&y) {
        let e = v - r.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>();
        for i in 0..3 {
            for j in 0..3 {
                bread[i][j] += r[i] * r[j] / n;
                meat[i][j] += r[i] * r[j] * e * e / n;
            }
        }
    }
    let inv = invert_dense(&bread);
    let cov = fit.covariance.as_ref().unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let mut want = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    want += inv[i][k] * meat[k][l] * inv[j][l];
                }
            }
            assert!((cov[(i, j)] - want).abs() < 1e-8 * want.abs().max(1.0));
        }
    }
}

#[test]
fn sandwich_of_zero_contributions_is_zero() {
    let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.2, -0.5]);
    let s = sandwich_covariance(&DMatrix::zeros(10, 2), &m).unwrap();
    assert_eq!(s.amax(), 0.0);
}

#[test]
fn near_singular_jacobian_is_rejected() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
    assert!(matches!(sandwich_covariance(&DMatrix::zeros(3, 2), &m), Err(Error::Singular { .. })));
}

#[test]
fn collinear_covariates_are_singular() {
    let t = toy(300, 4);
    let obs: Vec<Observation> = t
        .ds
        .observations()
        .iter()
        .map(|o| Observation::new(vec![o.covariates[0], 2.0 * o.covariates[0]], o.exposure, o.outcome).unwrap())
        .collect();
    let ds = Dataset::new(vec!["a".into(), "b".into()], obs).unwrap();
    for spec in [WorkingModelSpec::identity(), WorkingModelSpec::logistic()] {
        let r = solve_beta(&ds, &t.truth, &spec, None, &opts());
        assert!(matches!(r, Err(Error::Singular { .. })), "{r:?}");
    }
}

#[test]
fn discrete_support_matches_enumerated_projection() {
    for seed in 0..5 {
        let (ds, nf, pop) = discrete_instance(3000, 300 + seed);
        let fit = solve_beta(&ds, &nf, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
        let want = enumerate_projection(&pop, |_| 1.0);
        for (a, b) in fit.beta_hat.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // Residual terms cancel cell by cell, so the plugin coincides.
        let plug = plugin_projection(&ds, &nf, &WorkingModelSpec::logistic(), &opts()).unwrap();
        for (a, b) in fit.beta_hat.as_slice().iter().zip(plug.beta_hat.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(plug.covariance.is_none());
    }
}

#[test]
fn constant_weight_rescaling_leaves_beta_unchanged() {
    let t = toy(800, 31);
    let a = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    let spec = WorkingModelSpec::logistic().with_weight(Weight::Constant(3.7));
    let b = solve_beta(&t.ds, &t.truth, &spec, None, &opts()).unwrap();
    for (u, v) in a.beta_hat.as_slice().iter().zip(b.beta_hat.as_slice()) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn unit_order_does_not_matter() {
    let t = toy(500, 32);
    let mut perm: Vec<usize> = (0..500).collect();
    perm.reverse();
    perm.swap(3, 250);
    let ds = t.ds.subset(&perm);
    let nf = t.truth.subset(&perm);
    let a = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    let b = solve_beta(&ds, &nf, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    for (u, v) in a.beta_hat.as_slice().iter().zip(b.beta_hat.as_slice()) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn misaligned_nuisances_are_a_contract_error() {
    let t = toy(100, 3);
    let short = t.truth.subset(&(0..50).collect::<Vec<_>>());
    let r = estimating_equation(&Beta::zeros(3), &t.ds, &short, &WorkingModelSpec::logistic());
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn iteration_cap_reports_best_iterate() {
    let t = toy(300, 8);
    let o = SolveOptions { max_iter: 0, check_uniqueness: false, ..opts() };
    let init = Beta::new(vec![3.0, -3.0, 3.0]).unwrap();
    match solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), Some(&init), &o) {
        Err(Error::NonConvergence { best, residual, .. }) => {
            assert_eq!(best, vec![3.0, -3.0, 3.0]);
            assert!(residual > 1e-8);
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn well_posed_fit_has_single_root() {
    let t = toy(1000, 9);
    let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    assert!(fit.solver.converged && !fit.solver.multiple_roots_suspected);
}

#[test]
fn wald_interval_properties() {
    let t = toy(1000, 41);
    let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    let x = [0.3, -0.2];
    let e = fit.predict(&x, 0.95).unwrap();
    assert!(e.ci_low <= e.point && e.point <= e.ci_high);
    assert!((e.ci_high - e.point - 1.96 * e.se).abs() < 1e-14);
    let e4 = predict_pc_with_ci(&fit, &x, 0.95, 4 * fit.n).unwrap();
    assert!(((e4.ci_high - e4.ci_low) / (e.ci_high - e.ci_low) - 0.5).abs() < 1e-12);

    let mut zero = fit.clone();
    zero.covariance = Some(DMatrix::zeros(3, 3));
    let d = zero.predict(&x, 0.95).unwrap();
    assert_eq!((d.ci_low, d.ci_high), (d.point, d.point));

    assert_eq!(z_quantile(0.95).unwrap(), 1.96);
    assert!((z_quantile(0.90).unwrap() - 1.644_853_626_951_472_2).abs() < 1e-9);
    assert!(z_quantile(1.0).is_err());
}

#[test]
fn identity_intervals_are_clamped_for_display() {
    let t = toy(200, 42);
    let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::identity(), None, &opts()).unwrap();
    let e = fit.predict(&[40.0, 0.0], 0.95).unwrap();
    assert!(e.clamped);
    assert!((0.0..=1.0).contains(&e.point) && e.ci_low >= 0.0 && e.ci_high <= 1.0);
}

#[test]
fn covariance_is_symmetric_psd() {
    for seed in 0..5 {
        let t = toy(400, 50 + seed);
        let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
        let c = fit.covariance.unwrap();
        assert_eq!(c, c.transpose());
        let eig = c.symmetric_eigen().eigenvalues;
        assert!(eig.min() >= -1e-8);
    }
}

#[test]
fn fit_document_round_trips() {
    let t = toy(300, 43);
    let fit = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts()).unwrap();
    let back = ProjectionFit::from_json(&fit.to_json().unwrap()).unwrap();
    assert_eq!(back.beta_hat, fit.beta_hat);
    assert_eq!(back.covariance, fit.covariance);
    let x = [0.1, 0.4];
    assert_eq!(back.predict(&x, 0.95).unwrap(), fit.predict(&x, 0.95).unwrap());
}

#[test]
fn odds_reporting() {
    assert!((odds_of_causation(0.75).unwrap() - 3.0).abs() < 1e-12);
    assert!((odds_of_causation(0.5).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(odds_of_causation(1.0), Err(Error::InfiniteOdds(_))));
    assert!(matches!(odds_of_causation(0.0), Err(Error::InfiniteOdds(_))));
    assert!((odds_ratio(0.28) - 1.32).abs() < 0.005);
}

#[test]
fn bootstrap_is_reproducible_and_checks_b() {
    let t = toy(800, 44);
    let cfg = NuisanceConfig::new(RegressorSpec::logistic()).folds(2).seed(1);
    let spec = WorkingModelSpec::logistic();
    assert!(matches!(bootstrap_covariance(&t.ds, &spec, &cfg, 10, 1), Err(Error::InvalidArgument(_))));
    let a = bootstrap_covariance(&t.ds, &spec, &cfg, 50, 7).unwrap();
    let b = bootstrap_covariance(&t.ds, &spec, &cfg, 50, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.symmetric_eigen().eigenvalues.min() >= -1e-10);
}

/// Expected pseudo-outcome at one covariate value with perturbed nuisances,
/// computed exactly over the four (A, Y) cells.
fn conditional_bias(truth: (f64, f64, f64), fitted: Eta) -> f64 {
    let (pi, mu0, mu1) = truth;
    let mut e = 0.0;
    for (a, pa) in [(1.0, pi), (0.0, 1.0 - pi)] {
        let m = if a == 1.0 { mu1 } else { mu0 };
        for (y, py) in [(1.0, m), (0.0, 1.0 - m)] {
            e += pa * py * pseudo_outcome(a, y, fitted);
        }
    }
    e - gamma_plugin(mu0, mu1)
}

#[test]
fn bias_is_a_product_of_nuisance_errors() {
    let truth = (0.35, 0.2, 0.55);
    let grid = [-0.04, -0.02, -0.01, 0.0, 0.01, 0.02, 0.04];
    // mu1 correct: the bias is exactly eps * delta / (mu1 (1 - pi - delta)).
    for &eps in &grid {
        for &delta in &grid {
            let b = conditional_bias(truth, Eta { pi: truth.0 + delta, mu0: truth.1 + eps, mu1: truth.2 });
            let want = eps * delta / (truth.2 * (1.0 - truth.0 - delta));
            assert!((b - want).abs() < 1e-14, "eps {eps} delta {delta}: {b} vs {want}");
        }
    }
    // pi correct: no first-order term in either perturbation.
    for &eps in &grid {
        for &zeta in &grid {
            let b = conditional_bias(truth, Eta { pi: truth.0, mu0: truth.1 + eps, mu1: truth.2 + zeta });
            assert!(b.abs() <= 2.0 * (eps.abs() + zeta.abs()) * zeta.abs() / truth.2.powi(2) + 1e-15);
            if zeta == 0.0 {
                assert!(b.abs() < 1e-15);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_fits_solve_the_moment_condition(seed in 0u64..10_000, n in 150usize..500) {
        let t = toy(n, seed);
        let spec = WorkingModelSpec::logistic();
        // Small noisy samples may have no finite root; that must surface as
        // non-convergence, never as a bogus fit.
        let fit = match solve_beta(&t.ds, &t.truth, &spec, None, &opts()) {
            Err(Error::NonConvergence { .. }) => return Ok(()),
            r => r.unwrap(),
        };
        let psi = estimating_equation(&fit.beta_hat, &t.ds, &t.truth, &spec).unwrap();
        prop_assert!(psi.iter().all(|v| v.abs() <= 1e-8));
        for j in 0..fit.p() {
            let mean = fit.if_values.column(j).sum() / n as f64;
            prop_assert!((mean - psi[j]).abs() < 1e-12);
        }
        let c = fit.covariance.unwrap();
        prop_assert!((&c - c.transpose()).amax() < 1e-12);
        prop_assert!(c.symmetric_eigen().eigenvalues.min() >= -1e-8);
    }
}


#[test]
fn escape_to_saturation_is_non_convergence() {
    let t = toy(182, 104);
    let r = solve_beta(&t.ds, &t.truth, &WorkingModelSpec::logistic(), None, &opts());
    assert!(matches!(r, Err(Error::NonConvergence { .. })), "{r:?}");
}
