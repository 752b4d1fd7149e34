//! Gibbs sampler for the grouped horseshoe regression, used as a reference
//! for the variational fit.
//!
//! The half-Cauchy local scales use the inverse-gamma augmentation
//! `λ² | ν ~ IG(1/2, 1/ν)`, `ν ~ IG(1/2, 1)`, which makes every full
//! conditional standard:
//!
//! * `β | ·  ~ N(A⁻¹Xᵀy, σ²A⁻¹)`, `A = XᵀX + diag(1/(τ²λ²))`
//! * `λ_t² | · ~ IG(1, 1/ν_t + β_t²/(2σ²τ²))`, `ν_t | · ~ IG(1, 1 + 1/λ_t²)`
//! * `τ_g⁻² | · ~ Γ(a_g + s_g/2, b_g + Σ_{t∈g} β_t²/(2σ²λ_t²))`
//! * `σ⁻² | · ~ Γ(c + n/2 + s/2, d + ‖y − Xβ‖²/2 + Σ_t β_t²/(2τ²λ_t²))`

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_task, Hyperparams, RegressionTask, Variant};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Pin every `λ_t` and `τ_g` at one, leaving `β` and `σ` random.
    pub freeze_scales: bool,
    /// Keep the retained `β` draws in the summary.
    pub keep_draws: bool,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            n_iter: 40_000,
            n_burnin: 20_000,
            thin: 1,
            seed: 0,
            freeze_scales: false,
            keep_draws: false,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.thin == 0 || self.n_burnin >= self.n_iter {
            return Err(Error::InvalidParam(format!(
                "MCMC needs n_iter >= 1, thin >= 1 and n_burnin < n_iter (got {}, {}, {})",
                self.n_iter, self.thin, self.n_burnin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSummary {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Effective sample size of each coefficient's chain.
    pub ess: Vec<f64>,
    pub draws_kept: usize,
    pub seconds: f64,
    /// Retained `β` draws, one row per draw, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<Vec<f64>>>,
}

impl McmcSummary {
    /// Monte-Carlo standard error of each posterior mean.
    pub fn mcse(&self) -> Vec<f64> {
        self.sds
            .iter()
            .zip(&self.ess)
            .map(|(sd, ess)| sd / ess.max(1.0).sqrt())
            .collect()
    }
}

/// Current values of every unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub beta: DVector<f64>,
    pub lambda_sq: Vec<f64>,
    pub nu: Vec<f64>,
    /// `τ_g⁻²`; fixed at the pooled values under the pooled variant.
    pub inv_tau_sq: Vec<f64>,
    pub inv_sigma_sq: f64,
}

/// One chain's fixed ingredients.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    x: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    groups: Vec<usize>,
    counts: Vec<usize>,
    hyper: Hyperparams,
    freeze_scales: bool,
}

/// Beyond this ratio of columns to rows `β` is drawn by the `O(n²s)` method.
const LOW_RANK_RATIO: usize = 4;

impl GibbsSampler {
    pub fn new(task: &RegressionTask, hyper: &Hyperparams, freeze_scales: bool) -> Result<Self> {
        hyper.validate()?;
        validate_task(task, hyper.num_groups())?;
        let groups: Vec<usize> = (0..task.s()).map(|t| task.group_of(t)).collect();
        Ok(Self {
            gram: task.x.transpose() * &task.x,
            xty: task.x.transpose() * &task.y,
            x: task.x.clone(),
            y: task.y.clone(),
            counts: task.group_counts(hyper.num_groups()),
            groups,
            hyper: hyper.clone(),
            freeze_scales,
        })
    }

    pub fn s(&self) -> usize {
        self.x.ncols()
    }

    /// Replaces the response, e.g. when simulating `y` given the parameters.
    pub fn set_response(&mut self, y: DVector<f64>) {
        self.xty = self.x.transpose() * &y;
        self.y = y;
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    fn pooled(&self) -> bool {
        self.hyper.variant == Variant::PInc2
    }

    /// Deterministic starting point: `β = 0`, unit scales.
    pub fn initial_state(&self) -> GibbsState {
        let s = self.s();
        let inv_tau_sq = if self.pooled() && !self.freeze_scales {
            self.hyper.pooled_tau_sq.iter().map(|t| 1.0 / t).collect()
        } else {
            vec![1.0; self.hyper.num_groups()]
        };
        GibbsState {
            beta: DVector::zeros(s),
            lambda_sq: vec![1.0; s],
            nu: vec![1.0; s],
            inv_tau_sq,
            inv_sigma_sq: 1.0,
        }
    }

    /// A draw of every unknown from the prior.
    pub fn draw_prior(&self, rng: &mut ChaCha8Rng) -> Result<GibbsState> {
        let s = self.s();
        let h = &self.hyper;
        let inv_sigma_sq = gamma(rng, h.c, h.d)?;
        let inv_tau_sq: Vec<f64> = if self.freeze_scales {
            vec![1.0; h.num_groups()]
        } else if self.pooled() {
            h.pooled_tau_sq.iter().map(|t| 1.0 / t).collect()
        } else {
            (0..h.num_groups()).map(|g| gamma(rng, h.a[g], h.b[g])).collect::<Result<_>>()?
        };
        let mut nu = vec![1.0; s];
        let mut lambda_sq = vec![1.0; s];
        if !self.freeze_scales {
            for t in 0..s {
                nu[t] = inv_gamma(rng, 0.5, 1.0)?;
                lambda_sq[t] = inv_gamma(rng, 0.5, 1.0 / nu[t])?;
            }
        }
        let beta = DVector::from_fn(s, |t, _| {
            let var = lambda_sq[t] / (inv_sigma_sq * inv_tau_sq[self.groups[t]]);
            var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        Ok(GibbsState {
            beta,
            lambda_sq,
            nu,
            inv_tau_sq,
            inv_sigma_sq,
        })
    }

    /// `y ~ N(Xβ, σ²I)` at the given parameters.
    pub fn draw_response(&self, state: &GibbsState, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let sd = (1.0 / state.inv_sigma_sq).sqrt();
        let mut y = &self.x * &state.beta;
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        y
    }

    /// One scan over all full conditionals.
    pub fn step(&self, state: &mut GibbsState, rng: &mut ChaCha8Rng) -> Result<()> {
        let s = self.s();
        let h = &self.hyper;
        self.draw_beta(state, rng)?;

        if !self.freeze_scales {
            let w = state.inv_sigma_sq;
            for t in 0..s {
                let b2 = state.beta[t] * state.beta[t];
                let it = state.inv_tau_sq[self.groups[t]];
                state.lambda_sq[t] = inv_gamma(rng, 1.0, 1.0 / state.nu[t] + 0.5 * b2 * w * it)?;
                state.nu[t] = inv_gamma(rng, 1.0, 1.0 + 1.0 / state.lambda_sq[t])?;
            }
            if !self.pooled() {
                let mut acc = vec![0.0; h.num_groups()];
                for t in 0..s {
                    acc[self.groups[t]] += state.beta[t] * state.beta[t] / state.lambda_sq[t];
                }
                for g in 0..h.num_groups() {
                    let shape = h.a[g] + 0.5 * self.counts[g] as f64;
                    state.inv_tau_sq[g] = gamma(rng, shape, h.b[g] + 0.5 * w * acc[g])?;
                }
            }
        }

        let resid = (&self.y - &self.x * &state.beta).norm_squared();
        let prior_quad: f64 = (0..s)
            .map(|t| state.beta[t] * state.beta[t] * state.inv_tau_sq[self.groups[t]] / state.lambda_sq[t])
            .sum();
        let n = self.x.nrows() as f64;
        state.inv_sigma_sq = gamma(rng, h.c + 0.5 * n + 0.5 * s as f64, h.d + 0.5 * resid + 0.5 * prior_quad)?;
        Ok(())
    }

    fn prior_precision(&self, state: &GibbsState) -> DVector<f64> {
        DVector::from_fn(self.s(), |t, _| state.inv_tau_sq[self.groups[t]] / state.lambda_sq[t])
    }

    fn draw_beta(&self, state: &mut GibbsState, rng: &mut ChaCha8Rng) -> Result<()> {
        let (n, s) = self.x.shape();
        let dinv = self.prior_precision(state);
        let sigma = (1.0 / state.inv_sigma_sq).sqrt();
        let z = DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal));
        if s > LOW_RANK_RATIO * n {
            // u ~ N(0, σ²D), δ ~ N(0, σ²I), (XDXᵀ + I) w = y − Xu − δ, β = u + DXᵀw.
            let dvec = dinv.map(|v| 1.0 / v);
            let u = DVector::from_fn(s, |t, _| sigma * dvec[t].sqrt() * z[t]);
            let delta = DVector::from_fn(n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            let mut xd = self.x.clone();
            for (t, mut col) in xd.column_iter_mut().enumerate() {
                col *= dvec[t];
            }
            let mut m = &xd * self.x.transpose();
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            let ch = m.cholesky().ok_or_else(|| self.failure(state))?;
            let w = ch.solve(&(&self.y - &self.x * &u - delta));
            state.beta = u + xd.transpose() * w;
        } else {
            let mut a = self.gram.clone();
            for t in 0..s {
                a[(t, t)] += dinv[t];
            }
            let ch = a.cholesky().ok_or_else(|| self.failure(state))?;
            let mean = ch.solve(&self.xty);
            // Lᵀv = z gives v ~ N(0, A⁻¹).
            let v = ch
                .l()
                .tr_solve_lower_triangular(&z)
                .ok_or_else(|| self.failure(state))?;
            state.beta = mean + v * sigma;
        }
        if state.beta.iter().any(|v| !v.is_finite()) {
            return Err(self.failure(state));
        }
        Ok(())
    }

    fn failure(&self, state: &GibbsState) -> Error {
        Error::Numerical(format!(
            "β draw failed: σ⁻² = {:e}, min λ² = {:e}, max λ² = {:e}, τ⁻² = {:?}",
            state.inv_sigma_sq,
            state.lambda_sq.iter().copied().fold(f64::INFINITY, f64::min),
            state.lambda_sq.iter().copied().fold(0.0, f64::max),
            state.inv_tau_sq
        ))
    }
}

fn gamma(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> Result<f64> {
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

fn inv_gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> Result<f64> {
    Ok(1.0 / gamma(rng, shape, scale)?)
}

/// Runs one chain and summarises the retained `β` draws.
pub fn gibbs_fit(task: &RegressionTask, hyper: &Hyperparams, opts: &McmcOptions) -> Result<McmcSummary> {
    opts.validate()?;
    let started = Instant::now();
    let sampler = GibbsSampler::new(task, hyper, opts.freeze_scales)?;
    let mut rng = stream_rng(opts.seed, 4);
    let mut state = sampler.initial_state();
    let s = sampler.s();
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity((opts.n_iter - opts.n_burnin) / opts.thin + 1);
    for it in 0..opts.n_iter {
        sampler.step(&mut state, &mut rng)?;
        if it >= opts.n_burnin && (it - opts.n_burnin) % opts.thin == 0 {
            draws.push(state.beta.iter().copied().collect());
        }
    }
    let kept = draws.len() as f64;
    let mut means = vec![0.0; s];
    let mut sds = vec![0.0; s];
    let mut ess = vec![0.0; s];
    for t in 0..s {
        let chain: Vec<f64> = draws.iter().map(|d| d[t]).collect();
        let mean = chain.iter().sum::<f64>() / kept;
        let var = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (kept - 1.0).max(1.0);
        means[t] = mean;
        sds[t] = var.sqrt();
        ess[t] = effective_sample_size(&chain);
    }
    Ok(McmcSummary {
        means,
        sds,
        ess,
        draws_kept: draws.len(),
        seconds: started.elapsed().as_secs_f64(),
        draws: opts.keep_draws.then_some(draws),
    })
}

/// Effective sample size with Geyer's initial positive sequence estimator.
pub fn effective_sample_size(chain: &[f64]) -> f64 {
    let m = chain.len();
    if m < 4 {
        return m as f64;
    }
    let mean = chain.iter().sum::<f64>() / m as f64;
    let centred: Vec<f64> = chain.iter().map(|v| v - mean).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>() / m as f64;
    if c0 == 0.0 {
        return m as f64;
    }
    let rho = |k: usize| centred[..m - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / (m as f64 * c0);
    let mut sum = 0.0;
    let mut k = 0;
    while k + 1 < m {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0);
    m as f64 / tau
}

/// One statistic of a joint-distribution test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub forward_mean: f64,
    pub gibbs_mean: f64,
    /// Difference over its Monte-Carlo standard error.
    pub z: f64,
}

/// Bounded functions of `β₁` compared by [`geweke_test`]; the horseshoe
/// has no finite moments of `β` itself.
fn geweke_functions(b: f64) -> [(&'static str, f64); 4] {
    [
        ("P(beta1 > 0)", f64::from(u8::from(b > 0.0))),
        ("P(|beta1| < 0.5)", f64::from(u8::from(b.abs() < 0.5))),
        ("E tanh(beta1)^2", b.tanh().powi(2)),
        ("E atan(beta1)", b.atan()),
    ]
}

/// Joint-distribution test: compares independent draws from the prior with
/// a chain that alternates a Gibbs scan and a fresh `y` given the
/// parameters. Both have the prior as stationary law exactly when the
/// conditionals are right. Standard errors of the chain use batch means.
pub fn geweke_test(
    x: &DMatrix<f64>,
    hyper: &Hyperparams,
    draws: usize,
    seed: u64,
) -> Result<Vec<GewekeStatistic>> {
    let task = RegressionTask::single_group(1, DVector::zeros(x.nrows()), x.clone());
    let mut sampler = GibbsSampler::new(&task, hyper, false)?;
    let mut rng = stream_rng(seed, 5);

    let mut forward = vec![Vec::with_capacity(draws); 4];
    for _ in 0..draws {
        let st = sampler.draw_prior(&mut rng)?;
        for (k, (_, v)) in geweke_functions(st.beta[0]).iter().enumerate() {
            forward[k].push(*v);
        }
    }

    let mut state = sampler.draw_prior(&mut rng)?;
    let mut chain = vec![Vec::with_capacity(draws); 4];
    for _ in 0..draws {
        let y = sampler.draw_response(&state, &mut rng);
        sampler.set_response(y);
        sampler.step(&mut state, &mut rng)?;
        for (k, (_, v)) in geweke_functions(state.beta[0]).iter().enumerate() {
            chain[k].push(*v);
        }
    }

    Ok((0..4)
        .map(|k| {
            let (fm, fv) = mean_var(&forward[k]);
            let (gm, gse2) = batch_means(&chain[k]);
            GewekeStatistic {
                name: geweke_functions(0.0)[k].0.to_string(),
                forward_mean: fm,
                gibbs_mean: gm,
                z: (gm - fm) / (fv / draws as f64 + gse2).sqrt(),
            }
        })
        .collect())
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0))
}

/// Mean and squared standard error from 50 non-overlapping batches.
fn batch_means(v: &[f64]) -> (f64, f64) {
    const BATCHES: usize = 50;
    let size = v.len() / BATCHES;
    let means: Vec<f64> = (0..BATCHES).map(|b| v[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let (mean, var) = mean_var(&means);
    (mean, var / BATCHES as f64)
}
