use nalgebra::{DMatrix, DVector};
use rand::Rng;
use shrinkhs_core::eb;
use shrinkhs_core::model::{Hyperparams, PosteriorSummary, RegressionTask, Variant};
use shrinkhs_core::selection::*;
use shrinkhs_core::vb_engine::{fit_single, FitOptions};
use shrinkhs_core::Error;
use shrinkhs_testkit::{data, dss_grid_search, dss_objective as oracle_objective, quad};

#[test]
fn quantiles_match_independent_oracle() {
    for gamma in credible_levels() {
        let want = quad::normal_quantile(0.5 * (1.0 + gamma));
        let got = kappa_quantile(gamma).unwrap();
        assert!((got - want).abs() < 1e-9, "γ = {gamma}: {got} vs {want}");
    }
    assert!((kappa_quantile(0.95).unwrap() - 1.959_964).abs() < 1e-6);
    assert_eq!(select_at_level(&[2.0, 1.9], 0.95).unwrap(), vec![true, false]);
    assert!(kappa_quantile(1.0).is_err());
    assert!(kappa_quantile(0.0).is_err());
}

#[test]
fn kappa_examples() {
    let s = PosteriorSummary::new(vec![0.0, -3.0, 1.0], vec![1.0, 1.5, 0.0], 0.0);
    let k = kappa_statistic(&s);
    assert_eq!(k[0], 0.0);
    assert_eq!(k[1], 2.0);
    assert!(k[2].is_infinite());
}

#[test]
fn symmetrize_examples() {
    let k = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 4.0, 0.0]);
    let out = symmetrize_kappa(&k);
    assert_eq!(out[(0, 1)], 3.0);
    assert_eq!(out[(1, 0)], 3.0);
    let sym = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 5.0, 2.0, 5.0, 0.0]);
    assert_eq!(symmetrize_kappa(&sym), sym);
    assert_eq!(symmetrize_kappa(&DMatrix::zeros(3, 3)), DMatrix::zeros(3, 3));
}

#[test]
fn selection_shrinks_with_level() {
    let mut r = data::rng(1);
    let levels = credible_levels();
    for _ in 0..200 {
        let kappa: Vec<f64> = (0..20).map(|_| r.random_range(0.0..5.0)).collect();
        for w in levels.windows(2) {
            let lo = select_at_level(&kappa, w[0]).unwrap();
            let hi = select_at_level(&kappa, w[1]).unwrap();
            assert!(hi.iter().zip(&lo).all(|(&h, &l)| !h || l));
        }
    }
}

#[test]
fn empty_model_bound_is_student_t_marginal() {
    let mut r = data::rng(2);
    let y = data::gaussian_vector(&mut r, 7) * 1.3;
    let t = RegressionTask::single_group(1, y.clone(), DMatrix::zeros(7, 1));
    let h = Hyperparams {
        a: vec![1.0],
        b: vec![1.0],
        c: 2.0,
        d: 1.5,
        variant: Variant::PInc,
        pooled_tau_sq: vec![1.0],
    };
    // ∫ N(y | 0, φ⁻¹I) Γ(φ; c, d) dφ.
    let (n, yy) = (7.0, y.norm_squared());
    let log_norm = h.c * h.d.ln() - quad::lgamma(h.c) - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    let want = quad::integrate_log(
        |phi| (log_norm + (h.c - 1.0 + 0.5 * n) * phi.ln() - phi * (h.d + 0.5 * yy)).exp(),
        -30.0,
        10.0,
    )
    .ln();
    assert!((empty_model_elbo(&t, &h).unwrap() - want).abs() < 1e-9);
}

#[test]
fn zero_kappa_selects_nothing() {
    let mut r = data::rng(3);
    let p = data::linear(&mut r, 20, &[0.0; 3], 1.0);
    let t = RegressionTask::single_group(1, p.y, p.x);
    let h = Hyperparams::initial(1, Variant::PInc);
    let s = PosteriorSummary::new(vec![0.0; 3], vec![1.0; 3], -10.0);
    let out = threshold_select(&t, &h, &s, &FitOptions::default()).unwrap();
    assert_eq!(out.num_selected(), 0);
    assert_eq!(out.chosen_level, 0.9999);
    let empty = empty_model_elbo(&t, &h).unwrap();
    assert!(out.score_trace.iter().all(|&(_, v)| v == empty));
}

#[test]
fn full_model_refit_reproduces_bound() {
    let mut r = data::rng(4);
    let p = data::linear(&mut r, 40, &[3.0, -3.0, 2.0], 1.0);
    let t = RegressionTask::single_group(1, p.y, p.x);
    let h = Hyperparams {
        a: vec![1.0],
        b: vec![1.0],
        ..Hyperparams::initial(1, Variant::PInc)
    };
    let opts = FitOptions::default();
    let full = fit_single(&t, &h, &opts).unwrap();
    let refit = fit_single(&t.with_columns(&[0, 1, 2]), &h, &opts).unwrap();
    assert!((refit.state.elbo - full.state.elbo).abs() < 1e-8);
    // Every coefficient clears every level here, so each score is the full bound.
    let out = threshold_select(&t, &h, &full.summary, &opts).unwrap();
    assert_eq!(out.num_selected(), 3);
    assert!(out.score_trace.iter().all(|&(_, v)| (v - full.state.elbo).abs() < 1e-8));
    assert!(out.score_trace.iter().any(|&(g, _)| g == out.chosen_level));
}

struct StrongSignal {
    tasks: Vec<RegressionTask>,
    fit: eb::EbFit,
}

/// 50 seeded tasks with two unit coefficients, eight zeros and n = 1000,
/// sharing empirical-Bayes hyperparameters.
fn strong_signal() -> StrongSignal {
    let mut r = data::rng(1000);
    let tasks: Vec<RegressionTask> = (0..50)
        .map(|i| {
            let p = data::two_signal(&mut r, 1000, 10, 1.0);
            RegressionTask::single_group(i + 1, p.y, p.x)
        })
        .collect();
    let fit = eb::run(&tasks, &Hyperparams::initial(1, Variant::PInc), &FitOptions::default()).unwrap();
    StrongSignal { tasks, fit }
}

fn truth_two() -> Vec<bool> {
    (0..10).map(|t| t < 2).collect()
}

#[test]
fn refit_bound_recovers_strong_support() {
    let StrongSignal { tasks, fit } = strong_signal();
    let mut hits = 0;
    for (i, t) in tasks.iter().enumerate() {
        // The instance is easy enough that the exhaustive best pair is the truth.
        assert_eq!(data::best_pair(&t.x, &t.y), [0, 1]);
        let sel = threshold_select(t, &fit.hyper, &fit.summaries[i], &FitOptions::default()).unwrap();
        if sel.selected == truth_two() {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn dss_agrees_with_threshold_on_easy_tasks() {
    let StrongSignal { tasks, fit } = strong_signal();
    let mut agree = 0;
    for (i, t) in tasks.iter().enumerate() {
        let opts = FitOptions::default();
        let th = threshold_select(t, &fit.hyper, &fit.summaries[i], &opts).unwrap();
        let dss = DssOptions { folds: 5, seed: i as u64 };
        let ds = dss_select(t, &fit.hyper, &fit.summaries[i].means, &opts, &dss).unwrap();
        assert_eq!(ds.method, SelectionMethod::Dss);
        assert!(ds.score_trace.iter().any(|&(l, _)| l == ds.chosen_level));
        if ds.selected == th.selected {
            agree += 1;
        }
    }
    assert!(agree >= 35, "{agree}/50");
}

#[test]
fn dss_on_pure_noise_is_sparse() {
    let mut r = data::rng(2000);
    let tasks: Vec<RegressionTask> = (0..50)
        .map(|i| {
            let p = data::linear(&mut r, 50, &[0.0; 10], 1.0);
            RegressionTask::single_group(i + 1, p.y, p.x)
        })
        .collect();
    let fit = eb::run(&tasks, &Hyperparams::initial(1, Variant::PInc), &FitOptions::default()).unwrap();
    let mut sparse = 0;
    for (i, t) in tasks.iter().enumerate() {
        let dss = DssOptions { folds: 5, seed: i as u64 };
        let out = dss_select(t, &fit.hyper, &fit.summaries[i].means, &FitOptions::default(), &dss).unwrap();
        if out.num_selected() <= 1 {
            sparse += 1;
        }
    }
    assert!(sparse >= 40, "{sparse}/50");
}

#[test]
fn two_column_path_matches_grid_search() {
    let mut r = data::rng(5);
    for _ in 0..4 {
        let p = data::linear(&mut r, 30, &[1.2, -0.4], 1.0);
        let x = p.x.clone();
        let beta_bar = [r.random_range(0.3..1.5), -r.random_range(0.05..0.8)];
        let t = RegressionTask::single_group(1, p.y, x.clone());
        let path = dss_path(&t, &beta_bar).unwrap();
        assert_eq!(path.lambdas.len(), DSS_GRID);
        assert!(path.lambdas.windows(2).all(|w| w[0] > w[1]));
        assert!(path.coefficients[0].iter().all(|&v| v == 0.0));
        for k in [0, 15, 30, 55, 99] {
            let lambda = path.lambdas[k];
            let want = dss_grid_search(&x, &beta_bar, lambda);
            let got = &path.coefficients[k];
            for j in 0..2 {
                assert!((got[j] - want[j]).abs() < 1e-3, "λ = {lambda}: {got:?} vs {want:?}");
            }
            let f_got = oracle_objective(&x, &beta_bar, got, lambda);
            let f_want = oracle_objective(&x, &beta_bar, &want, lambda);
            assert!(f_got <= f_want + 1e-8, "objective {f_got} vs grid {f_want}");
            assert!((dss_objective(&x, &beta_bar, got, lambda) - f_got).abs() < 1e-12 * f_got.max(1.0));
        }
    }
}

#[test]
fn path_limits() {
    let mut r = data::rng(6);
    let p = data::linear(&mut r, 25, &[1.0, -2.0, 0.5], 1.0);
    let beta_bar = DVector::from_vec(vec![0.9, -1.7, 0.4]);
    // No penalty: the unpenalised minimiser reproduces β̄.
    let theta = &lasso_path(&p.x, &(&p.x * &beta_bar), &[0.0])[0];
    assert!((theta - &beta_bar).amax() < 1e-9);

    let t = RegressionTask::single_group(1, p.y.clone(), p.x.clone());
    let path = dss_path(&t, beta_bar.as_slice()).unwrap();
    assert!(path.coefficients[0].iter().all(|&v| v == 0.0));
    assert!(path.support(1).iter().any(|&b| b), "support should open just below λ_max");

    // Excluded coefficients stay at zero along the whole path.
    let path = dss_path(&t, &[0.9, 0.0, 0.4]).unwrap();
    assert!(path.coefficients.iter().all(|g| g[1] == 0.0));
    let trivial = dss_path(&t, &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(trivial.coefficients, vec![vec![0.0; 3]]);
}

#[test]
fn one_se_rule_degenerate_and_regular() {
    assert_eq!(one_se_rule(&[1.0; 5], &[0.0; 5]), 0);
    assert_eq!(one_se_rule(&[5.0, 3.0, 2.0, 1.0, 1.5], &[0.1, 0.1, 0.1, 0.5, 0.1]), 3);
    assert_eq!(one_se_rule(&[5.0, 3.0, 2.0, 1.0, 1.5], &[0.1, 0.1, 0.1, 1.0, 0.1]), 2);
}

#[test]
fn dss_guards() {
    let mut r = data::rng(7);
    let p = data::linear(&mut r, 10, &[1.0, 0.0], 1.0);
    let t = RegressionTask::single_group(1, p.y, p.x);
    let h = Hyperparams::initial(1, Variant::PInc);
    let err = dss_select(&t, &h, &[1.0, 0.1], &FitOptions::default(), &DssOptions::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidParam(_)));

    // A fold whose held-out responses are all equal is skipped; the rest suffice.
    let p = data::linear(&mut r, 40, &[1.0, 0.0], 1.0);
    let mut y = p.y.clone();
    let labels = fold_assignment(40, 5, 9);
    for i in 0..40 {
        if labels[i] == 2 {
            y[i] = 0.5;
        }
    }
    let t = RegressionTask::single_group(1, y, p.x.clone());
    let dss = DssOptions { folds: 5, seed: 9 };
    assert!(dss_select(&t, &h, &[1.0, 0.1], &FitOptions::default(), &dss).is_ok());
    let flat = RegressionTask::single_group(1, DVector::from_element(40, 2.0), p.x);
    assert!(dss_select(&flat, &h, &[1.0, 0.1], &FitOptions::default(), &dss).is_err());
}

#[test]
fn folds_are_balanced_and_seeded() {
    let a = fold_assignment(23, 5, 1);
    assert_eq!(a, fold_assignment(23, 5, 1));
    assert_ne!(a, fold_assignment(23, 5, 2));
    for k in 0..5 {
        let size = a.iter().filter(|&&l| l == k).count();
        assert!(size == 4 || size == 5);
    }
}
