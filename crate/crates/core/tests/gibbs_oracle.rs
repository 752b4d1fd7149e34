use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use shrinkhs_core::eb;
use shrinkhs_core::gibbs_oracle::{geweke_test, gibbs_fit, McmcOptions};
use shrinkhs_core::model::{Hyperparams, RegressionTask, Variant};
use shrinkhs_core::vb_engine::{fit_single, FitOptions};
use shrinkhs_testkit::{data, dense_inverse, ridge};

fn hyper(a: f64, b: f64, c: f64, d: f64) -> Hyperparams {
    let mut h = Hyperparams::initial(1, Variant::PInc);
    h.a = vec![a];
    h.b = vec![b];
    h.c = c;
    h.d = d;
    h
}

/// With unit scales the marginal posterior of `β` is a multivariate t:
/// centred at the ridge solution with scale `A⁻¹ · E σ²`.
#[test]
fn frozen_scales_match_ridge_posterior() {
    let mut r = data::rng(31);
    let p = data::linear(&mut r, 25, &[1.0, -0.5, 0.0, 0.3], 0.8);
    let task = RegressionTask::single_group(1, p.y.clone(), p.x.clone());
    let h = hyper(1.0, 1.0, 3.0, 2.0);
    let opts = McmcOptions {
        n_iter: 60_000,
        n_burnin: 2_000,
        seed: 1,
        freeze_scales: true,
        ..Default::default()
    };
    let out = gibbs_fit(&task, &h, &opts).unwrap();

    let s = 4;
    let mean = ridge(&p.x, &p.y, &[1.0; 4]);
    let mut a = p.x.transpose() * &p.x;
    for t in 0..s {
        a[(t, t)] += 1.0;
    }
    let ainv = dense_inverse(&a);
    let n = 25.0;
    let shape = h.c + n / 2.0;
    let rate = h.d + 0.5 * (p.y.norm_squared() - p.y.dot(&(&p.x * &mean)));
    let e_sigma_sq = rate / (shape - 1.0);
    let mcse = out.mcse();
    for t in 0..s {
        assert!((out.means[t] - mean[t]).abs() < 4.0 * mcse[t], "mean {t}");
        let sd = (ainv[(t, t)] * e_sigma_sq).sqrt();
        assert!((out.sds[t] / sd - 1.0).abs() < 0.03, "sd {t}: {} vs {sd}", out.sds[t]);
    }
}

/// A zero design carries no information about `β`, so its draws must match
/// the prior given `σ⁻² ~ Γ(c + n/2, d + ‖y‖²/2)`.
#[test]
fn zero_design_returns_prior() {
    let n = 5;
    let y = DVector::from_vec(vec![0.3, -1.2, 0.7, 2.0, -0.4]);
    let task = RegressionTask::single_group(1, y.clone(), DMatrix::zeros(n, 1));
    let h = hyper(2.0, 1.0, 2.0, 1.0);
    let opts = McmcOptions {
        n_iter: 200_000,
        n_burnin: 1_000,
        seed: 2,
        keep_draws: true,
        ..Default::default()
    };
    let out = gibbs_fit(&task, &h, &opts).unwrap();
    let draws: Vec<f64> = out.draws.unwrap().into_iter().map(|d| d[0]).collect();
    let m = draws.len() as f64;

    let mut r = data::rng(3);
    let sigma_post = Gamma::new(h.c + n as f64 / 2.0, 1.0 / (h.d + 0.5 * y.norm_squared())).unwrap();
    let tau_prior = Gamma::new(h.a[0], 1.0 / h.b[0]).unwrap();
    let forward: Vec<f64> = (0..400_000)
        .map(|_| {
            let w = sigma_post.sample(&mut r);
            let inv_tau = tau_prior.sample(&mut r);
            // Half-Cauchy as |N| / |N|.
            let lam = (r.sample::<f64, _>(StandardNormal) / r.sample::<f64, _>(StandardNormal)).abs();
            lam / (w * inv_tau).sqrt() * r.sample::<f64, _>(StandardNormal)
        })
        .collect();

    for cut in [0.1, 0.5, 2.0] {
        let chain = draws.iter().filter(|b| b.abs() < cut).count() as f64 / m;
        let fwd = forward.iter().filter(|b| b.abs() < cut).count() as f64 / forward.len() as f64;
        // The sampler mixes fast on one coordinate; allow for mild autocorrelation.
        let se = (fwd * (1.0 - fwd) * (5.0 / m + 1.0 / forward.len() as f64)).sqrt();
        assert!((chain - fwd).abs() < 4.0 * se, "P(|β| < {cut}): {chain} vs {fwd}");
    }
    let positive = draws.iter().filter(|&&b| b > 0.0).count() as f64 / m;
    assert!((positive - 0.5).abs() < 0.01, "{positive}");
}

#[test]
fn independent_seeds_agree() {
    let p = &data::comparison_suite(5, 1)[0];
    let task = RegressionTask::single_group(1, p.y.clone(), p.x.clone());
    let h = hyper(1.0, 1.0, 1e-3, 1e-3);
    let run = |seed| {
        gibbs_fit(
            &task,
            &h,
            &McmcOptions {
                n_iter: 30_000,
                n_burnin: 5_000,
                seed,
                ..Default::default()
            },
        )
        .unwrap()
    };
    let (a, b) = (run(10), run(11));
    assert_ne!(a.means, b.means);
    let (ea, eb) = (a.mcse(), b.mcse());
    for t in 0..10 {
        let se = (ea[t] * ea[t] + eb[t] * eb[t]).sqrt();
        assert!((a.means[t] - b.means[t]).abs() < 4.0 * se, "coefficient {t}");
    }
}

#[test]
fn joint_distribution_test() {
    let mut r = data::rng(6);
    let x = data::gaussian_matrix(&mut r, 5, 2);
    let stats = geweke_test(&x, &hyper(3.0, 2.0, 3.0, 2.0), 100_000, 7).unwrap();
    assert_eq!(stats.len(), 4);
    for s in &stats {
        assert!(s.z.abs() < 4.0, "{}: z = {}", s.name, s.z);
    }
}

#[test]
fn low_rank_draw_matches_dense_draw() {
    // s > 4n takes the low-rank branch; its frozen-scale mean is still ridge.
    let mut r = data::rng(8);
    let x = data::gaussian_matrix(&mut r, 3, 14);
    let y = data::gaussian_vector(&mut r, 3);
    let task = RegressionTask::single_group(1, y.clone(), x.clone());
    let h = hyper(1.0, 1.0, 5.0, 4.0);
    let out = gibbs_fit(
        &task,
        &h,
        &McmcOptions {
            n_iter: 40_000,
            n_burnin: 1_000,
            seed: 9,
            freeze_scales: true,
            ..Default::default()
        },
    )
    .unwrap();
    let mean = ridge(&x, &y, &[1.0; 14]);
    let mcse = out.mcse();
    for t in 0..14 {
        assert!((out.means[t] - mean[t]).abs() < 4.0 * mcse[t], "coefficient {t}");
    }
}

/// Variational and sampled posterior means on the comparison suite, at the
/// hyperparameters fitted jointly over the suite.
#[test]
fn variational_means_track_the_sampler() {
    let suite = data::comparison_suite(2024, 20);
    let tasks: Vec<RegressionTask> = suite
        .iter()
        .enumerate()
        .map(|(i, p)| RegressionTask::single_group(i + 1, p.y.clone(), p.x.clone()))
        .collect();
    let opts = FitOptions::default();
    let fitted = eb::run(&tasks, &Hyperparams::initial(1, Variant::PInc), &opts).unwrap();
    let mut worst: f64 = 0.0;
    for task in tasks.iter().take(5) {
        let vb = fit_single(task, &fitted.hyper, &opts).unwrap().summary;
        let mc = gibbs_fit(task, &fitted.hyper, &McmcOptions { seed: task.index as u64, ..Default::default() }).unwrap();
        for t in 0..10 {
            worst = worst.max((vb.means[t] - mc.means[t]).abs());
        }
    }
    assert!(worst < 0.15, "{worst}");
}
