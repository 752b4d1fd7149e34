//! Coordinate-ascent variational inference for a single grouped-horseshoe
//! regression.
//!
//! The variational family factorises into a Gaussian for `β`, a `Λ_l`
//! marginal for every local scale `λ_t`, gamma marginals for `τ_g⁻²` and a
//! gamma marginal for `σ⁻²`. One sweep updates, in order, the Gaussian block
//! (`Σ*`, `β*`), the group rates `b*`, the error rate `d*` and the local
//! parameters `l`, after which the lower bound is evaluated.
//!
//! The bound is computed term by term for arbitrary variational parameters.
//! At a point where `b*` and `d*` have just been refreshed it coincides with
//! the collapsed closed form returned by [`collapsed_elbo`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CovarianceForm, GaussianMoments, Hyperparams, PosteriorSummary, RegressionTask, Variant, VariationalState};
use crate::specfn::{digamma, ln_gamma, scaled_e1};

/// Floor applied to `l_t` before it enters `E1`.
pub const MIN_LAMBDA_L: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Shape of the variational gamma marginal of `τ_g⁻²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TauShape {
    /// `a*_g = a_g + s_g/2`, the exact conditional-conjugate update.
    #[default]
    #[serde(rename = "half")]
    Half,
    /// `a*_g = a_g + s_g/4`. The rate update is then not optimal for the
    /// shape and the bound is not guaranteed to increase.
    #[serde(rename = "quarter")]
    Quarter,
}

impl TauShape {
    fn shape(self, a: f64, count: usize) -> f64 {
        match self {
            TauShape::Quarter => a + 0.25 * count as f64,
            TauShape::Half => a + 0.5 * count as f64,
        }
    }
}

/// Prior on the local scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LocalScales {
    /// Half-Cauchy local scales (horseshoe).
    #[default]
    #[serde(rename = "horseshoe")]
    Horseshoe,
    /// Every `λ_t` pinned at one, giving a ridge-type Gaussian prior.
    #[serde(rename = "fixed")]
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop once the absolute change of the bound falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Record the bound after every sweep.
    pub track_elbo: bool,
    pub tau_shape: TauShape,
    pub local_scales: LocalScales,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 1000,
            track_elbo: false,
            tau_shape: TauShape::default(),
            local_scales: LocalScales::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParam(format!(
                "fit options need tol > 0 and max_iter >= 1 (tol = {}, max_iter = {})",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

/// `E[λ⁻²]` when `λ ~ Λ_l`, i.e. `1/(l e^l E1(l)) − 1`.
pub fn expected_inv_lambda_sq(l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::Domain {
            func: "expected_inv_lambda_sq",
            x: l,
        });
    }
    if l >= 1e3 {
        // 1 − l e^l E1(l) = 1/l − 2/l² + 6/l³ − …, divided by l e^l E1(l).
        let inv = 1.0 / l;
        let gap = inv * (1.0 - inv * (2.0 - inv * (6.0 - inv * (24.0 - inv * 120.0))));
        return Ok(gap / (1.0 - gap));
    }
    let le = l * scaled_e1(l)?;
    Ok((1.0 - le) / le)
}

/// Value of `l` at which `E[λ⁻²] = 1`.
fn unit_scale_l() -> f64 {
    let (mut lo, mut hi) = (1e-6_f64, 1e3_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        // E[λ⁻²] decreases in l.
        match expected_inv_lambda_sq(mid) {
            Ok(v) if v > 1.0 => lo = mid,
            _ => hi = mid,
        }
    }
    (lo * hi).sqrt()
}

/// Per-task precomputation reused across sweeps.
#[derive(Debug, Clone)]
pub struct TaskFit<'a> {
    task: &'a RegressionTask,
    counts: Vec<usize>,
    xty: DVector<f64>,
    /// `XᵀX`, absent on the low-rank path.
    gram: Option<DMatrix<f64>>,
    opts: FitOptions,
}

/// Per-sweep result of [`TaskFit::sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOutcome {
    pub elbo: f64,
}

impl<'a> TaskFit<'a> {
    pub fn new(task: &'a RegressionTask, num_groups: usize, opts: FitOptions) -> Result<Self> {
        crate::model::validate_task(task, num_groups)?;
        opts.validate()?;
        let xty = task.x.tr_mul(&task.y);
        let gram = if use_low_rank(task.n(), task.s()) {
            None
        } else {
            Some(task.x.tr_mul(&task.x))
        };
        Ok(Self {
            task,
            counts: task.group_counts(num_groups),
            xty,
            gram,
            opts,
        })
    }

    pub fn task(&self) -> &RegressionTask {
        self.task
    }

    pub fn options(&self) -> &FitOptions {
        &self.opts
    }

    /// Starting point: constant shapes `a*`, `c*`; `b* = d* = 1e-3`;
    /// `E[λ⁻²] = 1`; `β* = 0`.
    pub fn init_state(&self, hyper: &Hyperparams) -> Result<VariationalState> {
        hyper.validate()?;
        if hyper.num_groups() != self.counts.len() {
            return Err(Error::InvalidParam(format!(
                "hyperparameters carry {} groups, task fit expects {}",
                hyper.num_groups(),
                self.counts.len()
            )));
        }
        let (n, s) = (self.task.n(), self.task.s());
        let frozen = self.opts.local_scales == LocalScales::Fixed;
        let l0 = if frozen { 1.0 } else { unit_scale_l() };
        Ok(VariationalState {
            beta_mean: DVector::zeros(s),
            beta_cov: DMatrix::zeros(s, s),
            beta_var: vec![0.0; s],
            a_star: self.shapes(hyper),
            b_star: vec![1e-3; hyper.num_groups()],
            c_star: hyper.c + 0.5 * n as f64 + 0.5 * s as f64,
            d_star: 1e-3,
            lambda_l: vec![l0; s],
            e_inv_lambda_sq: vec![1.0; s],
            elbo: f64::NEG_INFINITY,
            frozen_lambda: frozen,
            moments: None,
            pending_cov: None,
        })
    }

    fn shapes(&self, hyper: &Hyperparams) -> Vec<f64> {
        hyper
            .a
            .iter()
            .zip(&self.counts)
            .map(|(&a, &k)| self.opts.tau_shape.shape(a, k))
            .collect()
    }

    /// `E[τ_g⁻²]`.
    pub fn e_inv_tau_sq(&self, state: &VariationalState, hyper: &Hyperparams, g: usize) -> f64 {
        match hyper.variant {
            Variant::PInc => state.a_star[g] / state.b_star[g],
            Variant::PInc2 => 1.0 / hyper.pooled_tau_sq[g],
        }
    }

    /// Diagonal prior precision `E[τ⁻²_{P_t}]·E[λ_t⁻²]` (before the `σ⁻²` factor).
    pub fn prior_precision(&self, state: &VariationalState, hyper: &Hyperparams) -> DVector<f64> {
        let e_tau: Vec<f64> = (0..hyper.num_groups()).map(|g| self.e_inv_tau_sq(state, hyper, g)).collect();
        DVector::from_iterator(
            self.task.s(),
            (0..self.task.s()).map(|t| e_tau[self.task.group_of(t)] * state.e_inv_lambda_sq[t]),
        )
    }

    /// Updates `Σ*` and `β*` from the current scale factors.
    pub fn update_beta(&self, state: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
        self.update_gaussian(state, hyper)?;
        self.finalize(state);
        Ok(())
    }

    /// As [`Self::update_beta`], but the full covariance is only stored in
    /// factored form until [`Self::finalize`].
    fn update_gaussian(&self, state: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
        let dinv = self.prior_precision(state, hyper);
        let e_sigma = state.e_inv_sigma_sq();
        let solved = match &self.gram {
            Some(gram) => solve_dense(gram, &dinv, &self.xty)?,
            None => solve_low_rank(&self.task.x, &dinv, &self.task.y)?,
        };
        let s = self.task.s();
        state.beta_mean = solved.mean;
        state.beta_var = solved.diag.iter().map(|v| v / e_sigma).collect();
        state.pending_cov = Some(solved.inverse.scaled(1.0 / e_sigma));
        let moments = GaussianMoments {
            log_det_cov: -(s as f64) * e_sigma.ln() - solved.log_det,
            trace_gram_cov: solved.trace_gram_inverse / e_sigma,
            resid_sq: (&self.task.y - &self.task.x * &state.beta_mean).norm_squared(),
        };
        if !moments.log_det_cov.is_finite() || state.beta_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "task {}: non-finite Gaussian block after solve",
                self.task.index
            )));
        }
        state.moments = Some(moments);
        Ok(())
    }

    /// Writes the covariance of the latest Gaussian update into `beta_cov`.
    pub fn finalize(&self, state: &mut VariationalState) {
        if let Some(cov) = state.pending_cov.take() {
            state.beta_cov = cov.to_matrix();
        }
    }

    /// Updates `b*` (no-op under the pooled variant).
    pub fn update_tau(&self, state: &mut VariationalState, hyper: &Hyperparams) {
        if hyper.variant == Variant::PInc2 {
            return;
        }
        let e_sigma = state.e_inv_sigma_sq();
        let mut acc = vec![0.0; hyper.num_groups()];
        for t in 0..self.task.s() {
            acc[self.task.group_of(t)] += state.e_inv_lambda_sq[t] * state.e_beta_sq(t);
        }
        for (g, b) in state.b_star.iter_mut().enumerate() {
            *b = hyper.b[g] + 0.5 * e_sigma * acc[g];
        }
    }

    /// Updates `d*`.
    pub fn update_sigma(&self, state: &mut VariationalState, hyper: &Hyperparams) {
        let dinv = self.prior_precision(state, hyper);
        let cache = self.moments(state);
        let prior_quad: f64 = (0..self.task.s()).map(|t| dinv[t] * state.e_beta_sq(t)).sum();
        state.d_star = hyper.d + 0.5 * prior_quad + 0.5 * (cache.resid_sq + cache.trace_gram_cov);
    }

    /// Updates `l_t` and `E[λ_t⁻²]` (no-op when local scales are fixed).
    pub fn update_lambda(&self, state: &mut VariationalState, hyper: &Hyperparams) -> Result<()> {
        if state.frozen_lambda {
            return Ok(());
        }
        let e_sigma = state.e_inv_sigma_sq();
        for t in 0..self.task.s() {
            let e_tau = self.e_inv_tau_sq(state, hyper, self.task.group_of(t));
            let l = (0.5 * e_sigma * e_tau * state.e_beta_sq(t)).max(MIN_LAMBDA_L);
            if !l.is_finite() {
                return Err(Error::Numerical(format!("task {}: l[{t}] = {l}", self.task.index)));
            }
            state.lambda_l[t] = l;
            state.e_inv_lambda_sq[t] = expected_inv_lambda_sq(l)?;
        }
        Ok(())
    }

    /// One full coordinate-ascent sweep followed by the bound.
    /// Only the diagonal of `Σ*` is refreshed; see [`Self::finalize`].
    pub fn sweep(&self, state: &mut VariationalState, hyper: &Hyperparams) -> Result<SweepOutcome> {
        self.update_gaussian(state, hyper)?;
        self.update_tau(state, hyper);
        self.update_sigma(state, hyper);
        self.update_lambda(state, hyper)?;
        state.elbo = self.elbo(state, hyper)?;
        Ok(SweepOutcome { elbo: state.elbo })
    }

    /// Refreshes the hyperparameter-dependent parts of the state (`a*` and,
    /// for the per-task variant, `b*`) after the hyperparameters changed.
    pub fn refresh_hyper(&self, state: &mut VariationalState, hyper: &Hyperparams) {
        state.a_star = self.shapes(hyper);
        if hyper.variant == Variant::PInc && self.has_gaussian(state) {
            self.update_tau(state, hyper);
        } else {
            state.b_star.clone_from(&hyper.b);
        }
    }

    fn has_gaussian(&self, state: &VariationalState) -> bool {
        state.moments.is_some()
    }

    /// Evidence lower bound at the current variational parameters.
    pub fn elbo(&self, state: &VariationalState, hyper: &Hyperparams) -> Result<f64> {
        Ok(self.elbo_terms(state, hyper)?.total())
    }

    pub fn elbo_terms(&self, state: &VariationalState, hyper: &Hyperparams) -> Result<ElboTerms> {
        let (n, s) = (self.task.n() as f64, self.task.s());
        let cache = self.moments(state);
        let e_sigma = state.e_inv_sigma_sq();
        let e_log_sigma = digamma(state.c_star)? - state.d_star.ln();

        let num_groups = hyper.num_groups();
        let mut e_tau = vec![0.0; num_groups];
        let mut e_log_tau = vec![0.0; num_groups];
        for g in 0..num_groups {
            match hyper.variant {
                Variant::PInc => {
                    e_tau[g] = state.a_star[g] / state.b_star[g];
                    e_log_tau[g] = digamma(state.a_star[g])? - state.b_star[g].ln();
                }
                Variant::PInc2 => {
                    e_tau[g] = 1.0 / hyper.pooled_tau_sq[g];
                    e_log_tau[g] = -hyper.pooled_tau_sq[g].ln();
                }
            }
        }

        let mut quad = 0.0;
        let mut log_tau_sum = 0.0;
        let mut local = 0.0;
        for t in 0..s {
            let g = self.task.group_of(t);
            quad += e_tau[g] * state.e_inv_lambda_sq[t] * state.e_beta_sq(t);
            log_tau_sum += e_log_tau[g];
            if !state.frozen_lambda {
                // log p(λ) − log q(λ) + ½ E log λ⁻², for q = Λ_l.
                let l = state.lambda_l[t];
                local += -PI.ln() + scaled_e1(l)?.ln() + l * state.e_inv_lambda_sq[t];
            }
        }

        let likelihood = -0.5 * n * LN_2PI + 0.5 * n * e_log_sigma - 0.5 * e_sigma * (cache.resid_sq + cache.trace_gram_cov);
        let beta_prior = -0.5 * s as f64 * LN_2PI + 0.5 * s as f64 * e_log_sigma + 0.5 * log_tau_sum - 0.5 * e_sigma * quad;
        let beta_entropy = 0.5 * cache.log_det_cov + 0.5 * s as f64 * (1.0 + LN_2PI);
        let sigma = hyper.c * hyper.d.ln() - ln_gamma(hyper.c)? + (hyper.c - 1.0) * e_log_sigma - hyper.d * e_sigma
            + gamma_entropy(state.c_star, state.d_star)?;
        let mut tau = 0.0;
        if hyper.variant == Variant::PInc {
            for g in 0..num_groups {
                let (a, b) = (hyper.a[g], hyper.b[g]);
                tau += a * b.ln() - ln_gamma(a)? + (a - 1.0) * e_log_tau[g] - b * e_tau[g]
                    + gamma_entropy(state.a_star[g], state.b_star[g])?;
            }
        }
        let terms = ElboTerms {
            likelihood,
            beta_prior,
            beta_entropy,
            sigma,
            tau,
            local,
        };
        if !terms.total().is_finite() {
            return Err(Error::Numerical(format!("task {}: non-finite bound, {terms:?}", self.task.index)));
        }
        Ok(terms)
    }

    /// Cached Gaussian-block scalars, recomputed from `beta_cov` if absent.
    pub fn moments(&self, state: &VariationalState) -> GaussianMoments {
        state.moments.unwrap_or_else(|| self.recompute_moments(state))
    }

    fn recompute_moments(&self, state: &VariationalState) -> GaussianMoments {
        let resid_sq = (&self.task.y - &self.task.x * &state.beta_mean).norm_squared();
        let log_det_cov = match state.beta_cov.clone().cholesky() {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => f64::NAN,
        };
        let xs = &self.task.x * &state.beta_cov;
        GaussianMoments {
            log_det_cov,
            trace_gram_cov: xs.component_mul(&self.task.x).sum(),
            resid_sq,
        }
    }
}

/// Individual contributions to the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `E log p(y | β, σ)`.
    pub likelihood: f64,
    /// `E log p(β | σ, τ, λ)` without the `E log λ⁻²` part, which lives in `local`.
    pub beta_prior: f64,
    pub beta_entropy: f64,
    /// Prior and entropy of `σ⁻²`.
    pub sigma: f64,
    /// Prior and entropy of the `τ_g⁻²`.
    pub tau: f64,
    /// Prior and entropy of the local scales.
    pub local: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.beta_prior + self.beta_entropy + self.sigma + self.tau + self.local
    }
}

fn gamma_entropy(shape: f64, rate: f64) -> Result<f64> {
    Ok(shape - rate.ln() + ln_gamma(shape)? + (1.0 - shape) * digamma(shape)?)
}

/// Collapsed closed form of the bound, valid when `a*_g = a_g + s_g/2` and
/// `b*`, `d*` are consistent with the other factors. Used to cross-check
/// [`TaskFit::elbo`].
pub fn collapsed_elbo(fit: &TaskFit<'_>, state: &VariationalState, hyper: &Hyperparams) -> Result<f64> {
    let task = fit.task();
    let (n, s) = (task.n() as f64, task.s());
    let cache = fit.moments(state);
    let mut value = -0.5 * n * LN_2PI - s as f64 * PI.ln() + 0.5 * cache.log_det_cov + 0.5 * s as f64;
    if hyper.variant == Variant::PInc {
        for g in 0..hyper.num_groups() {
            value += hyper.a[g] * hyper.b[g].ln() - ln_gamma(hyper.a[g])? - state.a_star[g] * state.b_star[g].ln()
                + ln_gamma(state.a_star[g])?;
        }
    }
    value += hyper.c * hyper.d.ln() - ln_gamma(hyper.c)? - state.c_star * state.d_star.ln() + ln_gamma(state.c_star)?;
    let e_sigma = state.e_inv_sigma_sq();
    for t in 0..s {
        let e_tau = fit.e_inv_tau_sq(state, hyper, task.group_of(t));
        if hyper.variant == Variant::PInc {
            value += 0.5 * e_sigma * e_tau * state.e_inv_lambda_sq[t] * state.e_beta_sq(t);
        }
        let l = state.lambda_l[t];
        let se1 = scaled_e1(l)?;
        value += se1.ln() - l + 1.0 / se1;
    }
    Ok(value)
}

/// Outcome of [`fit_single`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub state: VariationalState,
    pub summary: PosteriorSummary,
    pub iterations: usize,
    pub converged: bool,
    /// Bound after each sweep, when tracking was requested.
    pub elbo_trace: Vec<f64>,
}

/// Fits one task at fixed hyperparameters.
pub fn fit_single(task: &RegressionTask, hyper: &Hyperparams, opts: &FitOptions) -> Result<FitOutcome> {
    let fit = TaskFit::new(task, hyper.num_groups(), *opts)?;
    let mut state = fit.init_state(hyper)?;
    let (iterations, converged, elbo_trace) = run_sweeps(&fit, &mut state, hyper)?;
    fit.finalize(&mut state);
    Ok(FitOutcome {
        summary: state.summary(),
        state,
        iterations,
        converged,
        elbo_trace,
    })
}

/// Sweeps until the bound changes by less than the tolerance. Returns the
/// number of sweeps, the convergence flag and the optional trace.
pub fn run_sweeps(fit: &TaskFit<'_>, state: &mut VariationalState, hyper: &Hyperparams) -> Result<(usize, bool, Vec<f64>)> {
    let opts = fit.options();
    let mut trace = Vec::new();
    let mut previous = f64::NEG_INFINITY;
    for k in 1..=opts.max_iter {
        let elbo = fit.sweep(state, hyper)?.elbo;
        if opts.track_elbo {
            trace.push(elbo);
        }
        if k >= 2 && (elbo - previous).abs() < opts.tol {
            return Ok((k, true, trace));
        }
        previous = elbo;
    }
    log::warn!("task {}: no convergence after {} sweeps", fit.task().index, opts.max_iter);
    Ok((opts.max_iter, false, trace))
}

/// Beyond this ratio of columns to rows the Woodbury form is used.
const LOW_RANK_RATIO: usize = 4;

fn use_low_rank(n: usize, s: usize) -> bool {
    s > LOW_RANK_RATIO * n
}

pub(crate) struct GaussianSolve {
    pub mean: DVector<f64>,
    /// `(XᵀX + D⁻¹)⁻¹`.
    pub inverse: CovarianceForm,
    /// Its diagonal.
    pub diag: DVector<f64>,
    /// `ln |XᵀX + D⁻¹|`.
    pub log_det: f64,
    /// `tr(XᵀX (XᵀX + D⁻¹)⁻¹)`.
    pub trace_gram_inverse: f64,
}

/// Dense form, factorised as `A = D^{-1/2} (I + D^{1/2} XᵀX D^{1/2}) D^{-1/2}`
/// with `D = diag(1/dinv)`; the bracket has eigenvalues ≥ 1 however small
/// the prior precisions get.
pub(crate) fn solve_dense(gram: &DMatrix<f64>, dinv: &DVector<f64>, xty: &DVector<f64>) -> Result<GaussianSolve> {
    let s = dinv.len();
    let root = dinv.map(|v| 1.0 / v.sqrt());
    let mut scaled = DMatrix::from_fn(s, s, |i, j| gram[(i, j)] * root[i] * root[j]);
    for t in 0..s {
        scaled[(t, t)] += 1.0;
    }
    let Some(ch) = scaled.clone().cholesky() else {
        return solve_eigen(gram, dinv, xty);
    };
    let log_det = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() + dinv.iter().map(|v| v.ln()).sum::<f64>();
    let mean = ch.solve(&xty.component_mul(&root)).component_mul(&root);
    // A⁻¹ = WᵀW with W = L⁻¹ D^{1/2}.
    let mut w = lower_inverse(ch.l_dirty());
    for (t, mut col) in w.column_iter_mut().enumerate() {
        col *= root[t];
    }
    let diag = DVector::from_iterator(s, w.column_iter().map(|c| c.norm_squared()));
    // XᵀX A⁻¹ = I − D⁻¹A⁻¹.
    let trace_gram_inverse = s as f64 - dinv.dot(&diag);
    Ok(GaussianSolve {
        mean,
        inverse: CovarianceForm::Factor(w),
        diag,
        log_det,
        trace_gram_inverse,
    })
}

/// Inverse of the lower triangle of `l` by forward substitution on the unit
/// vectors, skipping the known leading zeros of each column.
fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let s = l.nrows();
    let ls = l.as_slice();
    let mut inv = DMatrix::zeros(s, s);
    for (j, col) in inv.as_mut_slice().chunks_exact_mut(s).enumerate() {
        col[j] = 1.0;
        for i in j..s {
            let (head, tail) = col.split_at_mut(i + 1);
            let xi = head[i] / ls[i * s + i];
            head[i] = xi;
            if xi != 0.0 {
                for (c, &lv) in tail.iter_mut().zip(&ls[i * s + i + 1..(i + 1) * s]) {
                    *c -= xi * lv;
                }
            }
        }
    }
    inv
}

/// Woodbury form: with `D = diag(1/dinv)` and `M = I + X D Xᵀ`,
/// `(XᵀX + D⁻¹)⁻¹ = D − D Xᵀ M⁻¹ X D` and the mean is `D Xᵀ M⁻¹ y`.
pub(crate) fn solve_low_rank(x: &DMatrix<f64>, dinv: &DVector<f64>, y: &DVector<f64>) -> Result<GaussianSolve> {
    let (n, s) = x.shape();
    let fallback = || solve_eigen(&x.tr_mul(x), dinv, &x.tr_mul(y));
    let dvec = dinv.map(|v| 1.0 / v);
    let mut xd = x.clone();
    for (t, mut col) in xd.column_iter_mut().enumerate() {
        col *= dvec[t];
    }
    let mut m = &xd * x.transpose();
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let Some(ch) = m.cholesky() else {
        return fallback();
    };
    let log_det = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() - dvec.iter().map(|v| v.ln()).sum::<f64>();
    let mean = xd.tr_mul(&ch.solve(y));
    // W = L⁻¹ X D, so that D Xᵀ M⁻¹ X D = WᵀW.
    let w = ch
        .l_dirty()
        .solve_lower_triangular(&xd)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut inverse = -(w.transpose() * &w);
    for t in 0..s {
        inverse[(t, t)] += dvec[t];
        // Cancellation in D − WᵀW; only happens when some prior variances dwarf the data.
        if !(inverse[(t, t)] > 1e-9 * dvec[t]) {
            return fallback();
        }
    }
    // tr(X A⁻¹ Xᵀ) = tr(I − M⁻¹) = n − ‖L⁻¹‖²_F.
    let l_inv = ch
        .l_dirty()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let trace_gram_inverse = n as f64 - l_inv.lower_triangle().norm_squared();
    Ok(GaussianSolve {
        mean,
        diag: inverse.diagonal(),
        inverse: CovarianceForm::Full(inverse),
        log_det,
        trace_gram_inverse,
    })
}

/// Eigendecomposition of `P = D^{1/2} XᵀX D^{1/2}`: `A⁻¹ = D^{1/2} Σ_k v_k v_kᵀ/(1+e_k) D^{1/2}`
/// is a sum of positive terms and stays accurate when `D` spans many orders
/// of magnitude.
fn solve_eigen(gram: &DMatrix<f64>, dinv: &DVector<f64>, xty: &DVector<f64>) -> Result<GaussianSolve> {
    let s = dinv.len();
    let root = dinv.map(|v| 1.0 / v.sqrt());
    let scaled = DMatrix::from_fn(s, s, |i, j| gram[(i, j)] * root[i] * root[j]);
    let eig = nalgebra::SymmetricEigen::new(scaled);
    let weights = eig.eigenvalues.map(|e| 1.0 / (1.0 + e.max(0.0)));
    let mut vw = eig.eigenvectors.clone();
    for (k, mut col) in vw.column_iter_mut().enumerate() {
        col *= weights[k];
    }
    let core_inv = &vw * eig.eigenvectors.transpose();
    let inverse = DMatrix::from_fn(s, s, |i, j| core_inv[(i, j)] * root[i] * root[j]);
    let mean = &inverse * xty;
    let log_det = eig.eigenvalues.iter().map(|e| (1.0 + e.max(0.0)).ln()).sum::<f64>() + dinv.iter().map(|v| v.ln()).sum::<f64>();
    let trace_gram_inverse = gram.component_mul(&inverse).sum();
    if !log_det.is_finite() || mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("prior precisions outside the representable range".into()));
    }
    Ok(GaussianSolve {
        mean,
        diag: inverse.diagonal(),
        inverse: CovarianceForm::Full(inverse),
        log_det,
        trace_gram_inverse,
    })
}
