//! Global empirical-Bayes loop: one variational sweep per task interleaved
//! with a closed-form update of the shared hyperparameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{infer_num_groups, Hyperparams, PosteriorSummary, RegressionTask, Variant, VariationalState};
use crate::specfn::digamma;
use crate::vb_engine::{FitOptions, TaskFit};

/// Bounds applied to the estimated `(a_g, b_g)`.
pub const HYPER_CLAMP: (f64, f64) = (1e-6, 1e6);

/// One outer iteration of [`run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbRecord {
    pub iteration: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub pooled_tau_sq: Vec<f64>,
    /// `Σ_i ℒ_i` after the M-step.
    pub total_elbo: f64,
    /// `max_i |ℒ_i^{(k)} − ℒ_i^{(k−1)}|`.
    pub max_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EbTrace {
    pub records: Vec<EbRecord>,
    /// Groups whose shape estimate hit the degenerate branch at some iteration.
    pub degenerate_groups: Vec<usize>,
}

/// Result of a full empirical-Bayes run.
#[derive(Debug, Clone)]
pub struct EbFit {
    pub states: Vec<VariationalState>,
    pub summaries: Vec<PosteriorSummary>,
    pub hyper: Hyperparams,
    pub trace: EbTrace,
    pub iterations: usize,
    pub converged: bool,
}

/// Outcome of the shape/rate update for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupEstimate {
    pub a: f64,
    pub b: f64,
    /// The dispersion term was not positive and `a` was clamped.
    pub degenerate: bool,
}

/// Closed-form update of `(a_g, b_g)` from the per-task sums
/// `S = Σ_i E[τ_{i,g}⁻²]` and `L = Σ_i E[log τ_{i,g}⁻²]` over `p` tasks.
///
/// A single task carries no between-task spread: the dispersion then only
/// reflects the variational gamma itself and `â` would chase `a*` upward
/// forever, so `p = 1` takes the degenerate branch.
pub fn estimate_group(sum_inv_tau: f64, sum_log_inv_tau: f64, p: usize) -> GroupEstimate {
    let pf = p as f64;
    let dispersion = sum_inv_tau.ln() - sum_log_inv_tau / pf - pf.ln();
    let (lo, hi) = HYPER_CLAMP;
    let (a, degenerate) = if p >= 2 && dispersion > 0.0 && dispersion.is_finite() {
        ((0.5 / dispersion).clamp(lo, hi), false)
    } else {
        (hi, true)
    };
    // Keeps a/b equal to the empirical mean S/p whenever b is inside the clamp.
    let b = (a * pf / sum_inv_tau).clamp(lo, hi);
    GroupEstimate { a, b, degenerate }
}

/// M-step for the per-task variant.
pub fn eb_update_pinc(states: &[VariationalState]) -> Result<Vec<GroupEstimate>> {
    let p = states.len();
    let first = states.first().ok_or_else(|| Error::InvalidParam("no task states".into()))?;
    let num_groups = first.a_star.len();
    let mut estimates = Vec::with_capacity(num_groups);
    for g in 0..num_groups {
        let mut s = 0.0;
        let mut l = 0.0;
        for st in states {
            s += st.a_star[g] / st.b_star[g];
            l += digamma(st.a_star[g])? - st.b_star[g].ln();
        }
        let est = estimate_group(s, l, p);
        if est.degenerate {
            log::warn!("group {}: zero dispersion across {p} task(s); shape clamped to {}", g + 1, est.a);
        }
        estimates.push(est);
    }
    Ok(estimates)
}

/// M-step for the pooled variant: the average over every coefficient in the
/// group of `E[σ⁻²]·E[λ⁻²]·E[β²]`. Groups with no coefficients keep `previous`.
pub fn eb_update_pinc2(states: &[VariationalState], tasks: &[RegressionTask], previous: &[f64]) -> Vec<f64> {
    let num_groups = previous.len();
    let mut num = vec![0.0; num_groups];
    let mut den = vec![0usize; num_groups];
    for (st, task) in states.iter().zip(tasks) {
        let e_sigma = st.e_inv_sigma_sq();
        for t in 0..task.s() {
            let g = task.group_of(t);
            num[g] += e_sigma * st.e_inv_lambda_sq[t] * st.e_beta_sq(t);
            den[g] += 1;
        }
    }
    (0..num_groups)
        .map(|g| if den[g] == 0 { previous[g] } else { num[g] / den[g] as f64 })
        .map(|v| v.clamp(HYPER_CLAMP.0, HYPER_CLAMP.1))
        .collect()
}

/// Runs the interleaved loop until `max_i |Δℒ_i| < tol` or `max_iter` outer
/// iterations. `(c, d)` stay at the values in `hyper0`.
pub fn run(tasks: &[RegressionTask], hyper0: &Hyperparams, opts: &FitOptions) -> Result<EbFit> {
    if tasks.is_empty() {
        return Err(Error::InvalidParam("no tasks to fit".into()));
    }
    let num_groups = hyper0.num_groups();
    if infer_num_groups(tasks) > num_groups {
        return Err(Error::InvalidParam(format!(
            "tasks use {} groups but hyperparameters carry {num_groups}",
            infer_num_groups(tasks)
        )));
    }
    let fits: Vec<TaskFit<'_>> = tasks
        .iter()
        .map(|t| TaskFit::new(t, num_groups, *opts))
        .collect::<Result<_>>()?;
    let mut hyper = hyper0.clone();
    let mut states: Vec<VariationalState> = fits.iter().map(|f| f.init_state(&hyper)).collect::<Result<_>>()?;
    let mut previous: Vec<f64> = vec![f64::NEG_INFINITY; tasks.len()];
    let mut trace = EbTrace::default();
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=opts.max_iter {
        iterations = k;
        // E-step: one sweep per task at the current hyperparameters.
        fits.par_iter()
            .zip(states.par_iter_mut())
            .try_for_each(|(fit, st)| fit.sweep(st, &hyper).map(|_| ()))?;

        // M-step.
        match hyper.variant {
            Variant::PInc => {
                for (g, est) in eb_update_pinc(&states)?.into_iter().enumerate() {
                    hyper.a[g] = est.a;
                    hyper.b[g] = est.b;
                    if est.degenerate && !trace.degenerate_groups.contains(&(g + 1)) {
                        trace.degenerate_groups.push(g + 1);
                    }
                }
            }
            Variant::PInc2 => {
                hyper.pooled_tau_sq = eb_update_pinc2(&states, tasks, &hyper.pooled_tau_sq);
            }
        }

        // Bounds under the new hyperparameters.
        let elbos: Vec<f64> = fits
            .par_iter()
            .zip(states.par_iter_mut())
            .map(|(fit, st)| {
                fit.refresh_hyper(st, &hyper);
                st.elbo = fit.elbo(st, &hyper)?;
                Ok(st.elbo)
            })
            .collect::<Result<_>>()?;
        let max_delta = elbos
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trace.records.push(EbRecord {
            iteration: k,
            a: hyper.a.clone(),
            b: hyper.b.clone(),
            pooled_tau_sq: hyper.pooled_tau_sq.clone(),
            total_elbo: elbos.iter().sum(),
            max_delta,
        });
        previous = elbos;
        if k >= 2 && max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("empirical Bayes loop stopped after {iterations} iterations without convergence");
    }
    for (fit, st) in fits.iter().zip(states.iter_mut()) {
        fit.finalize(st);
    }
    let summaries = states.iter().map(VariationalState::summary).collect();
    Ok(EbFit {
        states,
        summaries,
        hyper,
        trace,
        iterations,
        converged,
    })
}
