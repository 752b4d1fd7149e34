use nalgebra::{DMatrix, DVector};
use shrinkhs_core::eb::{self, eb_update_pinc, eb_update_pinc2, estimate_group, HYPER_CLAMP};
use shrinkhs_core::model::{Hyperparams, RegressionTask, Variant};
use shrinkhs_core::specfn::digamma;
use shrinkhs_core::vb_engine::{FitOptions, TaskFit};
use shrinkhs_testkit::data;

fn tasks(seed: u64, count: usize, n: usize, s: usize) -> Vec<RegressionTask> {
    let mut r = data::rng(seed);
    (0..count)
        .map(|i| {
            let mut beta = vec![0.0; s];
            beta[i % s] = 1.0 + i as f64 * 0.2;
            let p = data::linear(&mut r, n, &beta, 1.0);
            let groups = (0..s).map(|t| 1 + (t + i) % 2).collect();
            RegressionTask::new(i + 1, p.y, p.x, groups)
        })
        .collect()
}

#[test]
fn printed_closed_form_example() {
    let e2 = std::f64::consts::E.powi(2);
    let est = estimate_group(1.0 + e2, 2.0, 2);
    let want_a = 0.5 / ((1.0 + e2).ln() - 1.0 - 2f64.ln());
    assert!((est.a - want_a).abs() < 1e-12);
    assert!((est.a - 1.1527).abs() < 1e-4);
    assert!((est.b - 0.2748).abs() < 1e-4);
}

#[test]
fn m_step_preserves_empirical_mean() {
    let ts = tasks(1, 12, 20, 6);
    let h = Hyperparams::initial(2, Variant::PInc);
    let fits: Vec<TaskFit> = ts.iter().map(|t| TaskFit::new(t, 2, FitOptions::default()).unwrap()).collect();
    let mut states: Vec<_> = fits.iter().map(|f| f.init_state(&h).unwrap()).collect();
    for (f, st) in fits.iter().zip(states.iter_mut()) {
        for _ in 0..4 {
            f.sweep(st, &h).unwrap();
        }
    }
    let est = eb_update_pinc(&states).unwrap();
    for (g, e) in est.iter().enumerate() {
        let s: f64 = states.iter().map(|st| st.a_star[g] / st.b_star[g]).sum();
        let l: f64 = states.iter().map(|st| digamma(st.a_star[g]).unwrap() - st.b_star[g].ln()).sum();
        let p = states.len() as f64;
        assert!(!e.degenerate);
        assert!((e.a / e.b - s / p).abs() < 1e-12 * (s / p));
        let want_a = 0.5 / (s.ln() - l / p - p.ln());
        assert!((e.a - want_a).abs() < 1e-12 * want_a);
    }
}

#[test]
fn pooled_update_examples() {
    let t = RegressionTask::new(1, DVector::zeros(2), DMatrix::identity(2, 1), vec![1]);
    let h = Hyperparams::initial(2, Variant::PInc2);
    let fit = TaskFit::new(&t, 2, FitOptions::default()).unwrap();
    let mut st = fit.init_state(&h).unwrap();
    st.c_star = 3.0;
    st.d_star = 3.0;
    st.beta_mean = DVector::from_vec(vec![0.0]);
    st.beta_var = vec![0.04];
    st.e_inv_lambda_sq = vec![1.0];
    let out = eb_update_pinc2(&[st.clone()], &[t.clone()], &[0.7, 0.9]);
    assert!((out[0] - 0.04).abs() < 1e-15);
    // Group 2 has no coefficients anywhere.
    assert_eq!(out[1], 0.9);

    let mut first = st.clone();
    first.beta_var = vec![0.02];
    let mut second = st;
    second.beta_var = vec![0.06];
    let out = eb_update_pinc2(&[first, second], &[t.clone(), t], &[0.7, 0.9]);
    assert!((out[0] - 0.04).abs() < 1e-15);
}

#[test]
fn run_is_bit_reproducible() {
    let ts = tasks(2, 10, 15, 8);
    for variant in [Variant::PInc, Variant::PInc2] {
        let h = Hyperparams::initial(2, variant);
        let a = eb::run(&ts, &h, &FitOptions::default()).unwrap();
        let b = eb::run(&ts, &h, &FitOptions::default()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.hyper, b.hyper);
        assert_eq!(a.summaries, b.summaries);
        assert!(a.converged);
        assert!(a.iterations <= FitOptions::default().max_iter);
    }
}

#[test]
fn e_step_does_not_lower_any_bound() {
    let ts = tasks(3, 8, 12, 10);
    let mut h = Hyperparams::initial(2, Variant::PInc);
    let fits: Vec<TaskFit> = ts.iter().map(|t| TaskFit::new(t, 2, FitOptions::default()).unwrap()).collect();
    let mut states: Vec<_> = fits.iter().map(|f| f.init_state(&h).unwrap()).collect();
    for (f, st) in fits.iter().zip(states.iter_mut()) {
        f.sweep(st, &h).unwrap();
    }
    for _ in 0..40 {
        for (g, e) in eb_update_pinc(&states).unwrap().into_iter().enumerate() {
            h.a[g] = e.a;
            h.b[g] = e.b;
        }
        for (f, st) in fits.iter().zip(states.iter_mut()) {
            f.refresh_hyper(st, &h);
            let before = f.elbo(st, &h).unwrap();
            let after = f.sweep(st, &h).unwrap().elbo;
            assert!(after >= before - 1e-8, "{before} -> {after}");
        }
    }
}

#[test]
fn single_task_is_degenerate() {
    let mut ts = tasks(4, 1, 20, 5);
    ts[0].groups = vec![1; 5];
    let h = Hyperparams::initial(1, Variant::PInc);
    let fit = eb::run(&ts, &h, &FitOptions::default()).unwrap();
    assert_eq!(fit.trace.degenerate_groups, vec![1]);
    assert_eq!(fit.hyper.a[0], HYPER_CLAMP.1);
}

#[test]
fn hyperparameters_stay_in_clamp() {
    let ts = tasks(5, 6, 10, 30);
    let fit = eb::run(&ts, &Hyperparams::initial(2, Variant::PInc), &FitOptions::default()).unwrap();
    for v in fit.hyper.a.iter().chain(&fit.hyper.b) {
        assert!((HYPER_CLAMP.0..=HYPER_CLAMP.1).contains(v));
    }
    for rec in &fit.trace.records {
        assert!(rec.total_elbo.is_finite());
    }
    // (c, d) are never estimated.
    assert_eq!((fit.hyper.c, fit.hyper.d), (1e-3, 1e-3));
}

#[test]
fn mismatched_groups_rejected() {
    let ts = tasks(6, 3, 10, 4);
    assert!(eb::run(&ts, &Hyperparams::initial(1, Variant::PInc), &FitOptions::default()).is_err());
    assert!(eb::run(&[], &Hyperparams::initial(1, Variant::PInc), &FitOptions::default()).is_err());
}
