//! Seeded replicate runner for network-recovery simulations.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_regression_system, generate_precision, kappa_matrix, l1_errors, roc_curve, Adjacency, PrecisionSpec, RocCurve, Topology};
use crate::eb;
use crate::error::{Error, Result};
use crate::model::{Hyperparams, Variant};
use crate::rng::{replicate_rng, replicate_seed, Purpose};
use crate::selection::symmetrize_kappa;
use crate::vb_engine::{FitOptions, LocalScales};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "pInc")]
    PInc,
    #[serde(rename = "pInc2")]
    PInc2,
    /// Local scales fixed at one and a single group: a Gaussian prior with
    /// an empirical-Bayes variance.
    #[serde(rename = "ridge")]
    Ridge,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PInc => "pInc",
            Method::PInc2 => "pInc2",
            Method::Ridge => "ridge",
        }
    }
}

/// Source of the group labels handed to the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    None,
    /// The true adjacency.
    True,
    /// The true adjacency with half of its edges swapped for non-edges.
    Corrupted,
}

impl PriorMode {
    pub fn name(self) -> &'static str {
        match self {
            PriorMode::None => "none",
            PriorMode::True => "true",
            PriorMode::Corrupted => "corrupted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub topology: Topology,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub prior: PriorMode,
    pub fit: FitOptions,
}

/// One method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub topology: String,
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub prior: PriorMode,
    pub replicate: usize,
    pub err0: f64,
    pub err1: f64,
    pub auc: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Estimated prior mean of `τ_g⁻²` per group.
    pub prior_mean_inv_tau_sq: Vec<f64>,
    /// Wall-clock seconds of the fit; not part of the reproducible output.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub results: Vec<ReplicateResult>,
    /// ROC curve per entry of `results`.
    pub roc: Vec<RocCurve>,
}

/// Runs every method on `reps` independently generated networks. Replicate
/// `r` draws its precision matrix, data and prior corruption from its own
/// streams of the master seed, so results do not depend on scheduling.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationOutput> {
    if config.reps == 0 || config.n == 0 || config.methods.is_empty() {
        return Err(Error::InvalidParam("simulation needs reps >= 1, n >= 1 and at least one method".into()));
    }
    config.fit.validate()?;
    let per_rep: Vec<Vec<(ReplicateResult, RocCurve)>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect::<Result<_>>()?;
    let (results, roc) = per_rep.into_iter().flatten().unzip();
    Ok(SimulationOutput { results, roc })
}

fn run_replicate(config: &SimulationConfig, r: usize) -> Result<Vec<(ReplicateResult, RocCurve)>> {
    let rep = r as u64;
    let spec = PrecisionSpec {
        p: config.p,
        topology: config.topology,
        seed: replicate_seed(config.seed, rep, Purpose::Precision),
    };
    let truth = generate_precision(&spec)?;
    let data = super::sample_gaussian(&truth, config.n, replicate_seed(config.seed, rep, Purpose::Data))?;
    let prior: Option<Adjacency> = match config.prior {
        PriorMode::None => None,
        PriorMode::True => Some(truth.adjacency.clone()),
        PriorMode::Corrupted => {
            let mut rng = replicate_rng(config.seed, rep, Purpose::PriorCorruption);
            Some(truth.adjacency.corrupt_half(&mut rng))
        }
    };

    config
        .methods
        .iter()
        .map(|&method| {
            let started = Instant::now();
            let (tasks, hyper, opts) = match method {
                Method::Ridge => {
                    let opts = FitOptions {
                        local_scales: LocalScales::Fixed,
                        ..config.fit
                    };
                    (build_regression_system(&data, None)?, Hyperparams::initial(1, Variant::PInc), opts)
                }
                Method::PInc | Method::PInc2 => {
                    let variant = if method == Method::PInc { Variant::PInc } else { Variant::PInc2 };
                    let groups = if prior.is_some() { 2 } else { 1 };
                    (build_regression_system(&data, prior.as_ref())?, Hyperparams::initial(groups, variant), config.fit)
                }
            };
            let fit = eb::run(&tasks, &hyper, &opts)?;
            let seconds = started.elapsed().as_secs_f64();
            let estimates: Vec<DVector<f64>> = fit.states.iter().map(|s| s.beta_mean.clone()).collect();
            let (err0, err1) = l1_errors(&estimates, &truth)?;
            let strength = symmetrize_kappa(&kappa_matrix(&fit.summaries));
            let roc = roc_curve(&strength, &truth.adjacency)?;
            let prior_mean_inv_tau_sq = (0..fit.hyper.num_groups()).map(|g| fit.hyper.prior_mean_inv_tau_sq(g)).collect();
            Ok((
                ReplicateResult {
                    topology: config.topology.name().to_string(),
                    n: config.n,
                    p: config.p,
                    method,
                    prior: config.prior,
                    replicate: r,
                    err0,
                    err1,
                    auc: roc.auc,
                    iterations: fit.iterations,
                    converged: fit.converged,
                    prior_mean_inv_tau_sq,
                    seconds,
                },
                roc,
            ))
        })
        .collect()
}
