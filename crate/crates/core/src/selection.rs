//! Post-hoc variable selection on a fitted task.
//!
//! Two procedures are provided. [`threshold_select`] keeps coefficients whose
//! `κ = |mean|/sd` exceeds a normal quantile, refits the reduced model with
//! the hyperparameters held fixed and picks the credible level whose refit has
//! the largest lower bound. [`dss_select`] sparsifies the posterior-mean fit
//! with an adaptive lasso whose penalty is chosen by K-fold cross-validation
//! and the one-standard-error rule.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{kappa_ratio, Hyperparams, PosteriorSummary, RegressionTask};
use crate::rng::stream_rng;
use crate::specfn::ln_gamma;
use crate::vb_engine::{fit_single, FitOptions};

/// Posterior means below this magnitude get an infinite adaptive weight.
pub const DSS_ZERO: f64 = 1e-12;
/// Number of penalties on the DSS path.
pub const DSS_GRID: usize = 100;
/// Smallest penalty on the DSS path relative to the largest.
pub const DSS_RATIO: f64 = 1e-4;
/// Default number of cross-validation folds.
pub const DEFAULT_FOLDS: usize = 5;
/// Below this many observations cross-validation is refused.
pub const MIN_DSS_N: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Threshold,
    Dss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub selected: Vec<bool>,
    /// Credible level `γ` for thresholding, penalty `λ` for DSS.
    pub chosen_level: f64,
    /// `(level, score)`: refit bound per `γ`, or CV error per `λ`.
    pub score_trace: Vec<(f64, f64)>,
}

impl SelectionResult {
    pub fn num_selected(&self) -> usize {
        self.selected.iter().filter(|&&b| b).count()
    }

    fn empty(method: SelectionMethod, s: usize, level: f64, score: f64) -> Self {
        Self {
            method,
            selected: vec![false; s],
            chosen_level: level,
            score_trace: vec![(level, score)],
        }
    }
}

/// `{0.10, 0.15, …, 0.95} ∪ {0.9999}`.
pub fn credible_levels() -> Vec<f64> {
    let mut levels: Vec<f64> = (2..=19).map(|k| k as f64 / 20.0).collect();
    levels.push(0.9999);
    levels
}

/// `Φ⁻¹((1 + γ)/2)`.
pub fn kappa_quantile(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParam(format!("credible level must be in (0, 1), got {gamma}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 * (1.0 + gamma)))
}

/// `κ_r = |mean_r| / sd_r`; `+∞` where the sd is zero and the mean is not.
pub fn kappa_statistic(summary: &PosteriorSummary) -> Vec<f64> {
    kappa_ratio(&summary.means, &summary.sds)
}

/// `(k + kᵀ)/2`.
pub fn symmetrize_kappa(k: &DMatrix<f64>) -> DMatrix<f64> {
    (k + k.transpose()) * 0.5
}

/// Coefficients whose `κ` exceeds the quantile for level `gamma`.
pub fn select_at_level(kappa: &[f64], gamma: f64) -> Result<Vec<bool>> {
    let q = kappa_quantile(gamma)?;
    Ok(kappa.iter().map(|&k| k > q).collect())
}

/// Lower bound of the model with no covariates, where it equals the exact
/// log marginal likelihood `log p(y)` under `σ⁻² ~ Γ(c, d)`.
pub fn empty_model_elbo(task: &RegressionTask, hyper: &Hyperparams) -> Result<f64> {
    let n = task.n() as f64;
    let c_star = hyper.c + 0.5 * n;
    let d_star = hyper.d + 0.5 * task.y.norm_squared();
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() + hyper.c * hyper.d.ln() - ln_gamma(hyper.c)?
        - c_star * d_star.ln()
        + ln_gamma(c_star)?)
}

/// Bound of the model restricted to `selected`, with hyperparameters fixed.
/// The full model reuses `full_elbo` instead of refitting.
fn refit_elbo(
    task: &RegressionTask,
    hyper: &Hyperparams,
    opts: &FitOptions,
    selected: &[bool],
    full_elbo: f64,
) -> Result<f64> {
    let keep: Vec<usize> = (0..selected.len()).filter(|&t| selected[t]).collect();
    if keep.is_empty() {
        return empty_model_elbo(task, hyper);
    }
    if keep.len() == selected.len() && full_elbo.is_finite() {
        return Ok(full_elbo);
    }
    Ok(fit_single(&task.with_columns(&keep), hyper, opts)?.state.elbo)
}

/// Credible-level thresholding with refit-bound model choice. Ties favour
/// the higher level, i.e. the sparser model.
pub fn threshold_select(
    task: &RegressionTask,
    hyper: &Hyperparams,
    summary: &PosteriorSummary,
    opts: &FitOptions,
) -> Result<SelectionResult> {
    let s = task.s();
    if summary.kappa.len() != s {
        return Err(Error::Dimension {
            task: task.index,
            detail: format!("summary has {} coefficients, task has {s}", summary.kappa.len()),
        });
    }
    let levels = credible_levels();
    let selections: Vec<Vec<bool>> = levels
        .iter()
        .map(|&g| select_at_level(&summary.kappa, g))
        .collect::<Result<_>>()?;

    // Distinct selections are refitted once each.
    let mut unique: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    for sel in &selections {
        unique.entry(sel.clone()).or_insert(f64::NAN);
    }
    let keys: Vec<Vec<bool>> = unique.keys().cloned().collect();
    let scores: Vec<f64> = keys
        .par_iter()
        .map(|sel| refit_elbo(task, hyper, opts, sel, summary.elbo))
        .collect::<Result<_>>()?;
    for (k, v) in keys.into_iter().zip(scores) {
        unique.insert(k, v);
    }

    let mut trace = Vec::with_capacity(levels.len());
    let mut best: Option<usize> = None;
    for (idx, (&gamma, sel)) in levels.iter().zip(&selections).enumerate() {
        let score = unique[sel];
        trace.push((gamma, score));
        if best.is_none_or(|b| score >= trace[b].1) {
            best = Some(idx);
        }
    }
    let best = best.expect("level grid is non-empty");
    Ok(SelectionResult {
        method: SelectionMethod::Threshold,
        selected: selections[best].clone(),
        chosen_level: levels[best],
        score_trace: trace,
    })
}

/// Adaptive-lasso path of the decoupled shrinkage-and-selection surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DssPath {
    /// Decreasing penalties, starting at the smallest one giving all zeros.
    pub lambdas: Vec<f64>,
    /// One coefficient vector per penalty, in the task's column order.
    pub coefficients: Vec<Vec<f64>>,
}

impl DssPath {
    pub fn support(&self, k: usize) -> Vec<bool> {
        self.coefficients[k].iter().map(|&v| v != 0.0).collect()
    }
}

/// `(1/n)‖Xβ̄ − Xγ‖² + λ Σ_t |γ_t|/|β̄_t|`.
pub fn dss_objective(x: &DMatrix<f64>, beta_bar: &[f64], gamma: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let diff = DVector::from_iterator(gamma.len(), beta_bar.iter().zip(gamma).map(|(b, g)| b - g));
    let fit = x * diff;
    let penalty: f64 = beta_bar
        .iter()
        .zip(gamma)
        .map(|(&b, &g)| if b.abs() < DSS_ZERO { if g == 0.0 { 0.0 } else { f64::INFINITY } } else { g.abs() / b.abs() })
        .sum();
    fit.norm_squared() / n + lambda * penalty
}

/// Columns scaled by `|β̄_t|`, with excluded columns zeroed.
fn reweighted(x: &DMatrix<f64>, beta_bar: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let weights: Vec<f64> = beta_bar.iter().map(|&b| if b.abs() < DSS_ZERO { 0.0 } else { b.abs() }).collect();
    let mut xt = x.clone();
    for (j, &w) in weights.iter().enumerate() {
        xt.column_mut(j).scale_mut(w);
    }
    (xt, weights)
}

fn lambda_grid(lambda_max: f64) -> Vec<f64> {
    let step = DSS_RATIO.ln() / (DSS_GRID - 1) as f64;
    (0..DSS_GRID).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

/// Plain lasso `(1/n)‖y − Xθ‖² + λ‖θ‖₁` by cyclic coordinate descent, warm
/// started along a decreasing penalty sequence.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, lambdas: &[f64]) -> Vec<DVector<f64>> {
    const MAX_SWEEPS: usize = 100_000;
    const TOL: f64 = 1e-13;
    let (n, s) = x.shape();
    let scale = 2.0 / n as f64;
    let col_sq: Vec<f64> = (0..s).map(|j| scale * x.column(j).norm_squared()).collect();
    let mut theta = DVector::zeros(s);
    let mut resid = y.clone();
    let y_scale = y.amax().max(f64::MIN_POSITIVE);
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0_f64;
            for j in 0..s {
                if col_sq[j] == 0.0 {
                    continue;
                }
                let col = x.column(j);
                let old = theta[j];
                let rho = scale * col.dot(&resid) + col_sq[j] * old;
                let new = soft_threshold(rho, lambda) / col_sq[j];
                if new != old {
                    resid.axpy(old - new, &col, 1.0);
                    theta[j] = new;
                    max_step = max_step.max(((new - old) * col_sq[j].sqrt()).abs());
                }
            }
            if max_step <= TOL * y_scale {
                break;
            }
        }
        out.push(theta.clone());
    }
    out
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest useful penalty `max_t (2/n)|X̃_tᵀ X β̄|`.
fn lambda_max(xt: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    let n = xt.nrows() as f64;
    (xt.tr_mul(target) * (2.0 / n)).amax()
}

fn path_on_grid(x: &DMatrix<f64>, beta_bar: &[f64], lambdas: &[f64]) -> Vec<Vec<f64>> {
    let (xt, weights) = reweighted(x, beta_bar);
    let bb = DVector::from_iterator(beta_bar.len(), beta_bar.iter().zip(&weights).map(|(&b, &w)| if w == 0.0 { 0.0 } else { b }));
    let target = x * bb;
    lasso_path(&xt, &target, lambdas)
        .into_iter()
        .map(|theta| theta.iter().zip(&weights).map(|(th, w)| th * w).collect())
        .collect()
}

pub fn dss_path(task: &RegressionTask, beta_bar: &[f64]) -> Result<DssPath> {
    let s = task.s();
    if beta_bar.len() != s {
        return Err(Error::Dimension {
            task: task.index,
            detail: format!("{} posterior means for {s} columns", beta_bar.len()),
        });
    }
    if beta_bar.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam(format!("task {}: non-finite posterior mean", task.index)));
    }
    let (xt, weights) = reweighted(&task.x, beta_bar);
    let bb = DVector::from_iterator(s, beta_bar.iter().zip(&weights).map(|(&b, &w)| if w == 0.0 { 0.0 } else { b }));
    let lmax = lambda_max(&xt, &(&task.x * bb));
    if !(lmax > 0.0) {
        return Ok(DssPath {
            lambdas: vec![0.0],
            coefficients: vec![vec![0.0; s]],
        });
    }
    let lambdas = lambda_grid(lmax);
    let coefficients = path_on_grid(&task.x, beta_bar, &lambdas);
    Ok(DssPath { lambdas, coefficients })
}

/// Options for [`dss_select`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DssOptions {
    pub folds: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
}

impl Default for DssOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

/// Fold label of each observation: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 3));
    let mut label = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        label[i] = k % folds;
    }
    label
}

/// DSS selection with the penalty chosen by K-fold CV and the 1-SE rule.
/// Each fold refits the posterior means on its training rows with the
/// hyperparameters fixed.
pub fn dss_select(
    task: &RegressionTask,
    hyper: &Hyperparams,
    beta_bar: &[f64],
    fit_opts: &FitOptions,
    dss: &DssOptions,
) -> Result<SelectionResult> {
    let (n, s) = (task.n(), task.s());
    if dss.folds < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 folds, got {}", dss.folds)));
    }
    if n < MIN_DSS_N.max(dss.folds) {
        return Err(Error::InvalidParam(format!(
            "task {}: cross-validated DSS needs n >= {}, got {n}; use threshold selection",
            task.index,
            MIN_DSS_N.max(dss.folds)
        )));
    }
    let path = dss_path(task, beta_bar)?;
    if path.lambdas.len() == 1 {
        return Ok(SelectionResult::empty(SelectionMethod::Dss, s, path.lambdas[0], 0.0));
    }
    let labels = fold_assignment(n, dss.folds, dss.seed);
    let fold_errors: Vec<Option<Vec<f64>>> = (0..dss.folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
            let y_test: Vec<f64> = test.iter().map(|&i| task.y[i]).collect();
            if y_test.iter().all(|&v| v == y_test[0]) {
                log::warn!("task {}: fold {} has a constant held-out response; skipped", task.index, k + 1);
                return Ok(None);
            }
            let train_task = task.with_rows(&train);
            let refit = fit_single(&train_task, hyper, fit_opts)?;
            let bb: Vec<f64> = refit.state.beta_mean.iter().copied().collect();
            let coefs = path_on_grid(&train_task.x, &bb, &path.lambdas);
            let x_test = task.x.select_rows(&test);
            Ok(Some(
                coefs
                    .iter()
                    .map(|g| {
                        let pred = &x_test * DVector::from_column_slice(g);
                        y_test.iter().zip(pred.iter()).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / y_test.len() as f64
                    })
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let used: Vec<&Vec<f64>> = fold_errors.iter().flatten().collect();
    if used.len() < 2 {
        return Err(Error::Numerical(format!(
            "task {}: fewer than two usable cross-validation folds",
            task.index
        )));
    }
    let k = used.len() as f64;
    let (mse, se): (Vec<f64>, Vec<f64>) = (0..path.lambdas.len())
        .map(|j| {
            let mean = used.iter().map(|e| e[j]).sum::<f64>() / k;
            let var = used.iter().map(|e| (e[j] - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (mean, (var / k).sqrt())
        })
        .unzip();
    let chosen = one_se_rule(&mse, &se);
    Ok(SelectionResult {
        method: SelectionMethod::Dss,
        selected: path.support(chosen),
        chosen_level: path.lambdas[chosen],
        score_trace: path.lambdas.iter().copied().zip(mse).collect(),
    })
}

/// Index of the largest penalty (smallest index on a decreasing grid) whose
/// error is within one standard error of the minimum.
pub fn one_se_rule(mse: &[f64], se: &[f64]) -> usize {
    let best = mse
        .iter()
        .enumerate()
        .fold(0, |b, (j, &v)| if v < mse[b] { j } else { b });
    let bound = mse[best] + se[best];
    mse.iter().position(|&v| v <= bound).unwrap_or(best)
}
