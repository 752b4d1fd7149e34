//! Subcommand drivers.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};
use shrinkhs_core::eb::{self, EbFit};
use shrinkhs_core::gibbs_oracle::{gibbs_fit, McmcOptions};
use shrinkhs_core::model::{infer_num_groups, Hyperparams, RegressionTask, Variant};
use shrinkhs_core::netsim::{self, assemble_network, build_regression_system, other_nodes, Method, PriorMode, SimulationConfig, Topology};
use shrinkhs_core::rng::{replicate_rng, replicate_seed, Purpose};
use shrinkhs_core::selection::{dss_select, threshold_select, DssOptions, SelectionResult};
use shrinkhs_core::vb_engine::{FitOptions, TauShape};

use crate::args::*;
use crate::io::*;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// What a finished run reports back to `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub converged: bool,
}

pub fn run(cli: &Cli, threads: usize) -> Result<Outcome, CliError> {
    let common = cli.command.common();
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    match &cli.command {
        Command::Fit(a) => fit(a, a.selector.unwrap_or(SelectorArg::None), "fit", threads),
        Command::Select(a) => fit(a, a.selector.unwrap_or(SelectorArg::Threshold), "select", threads),
        Command::Network(a) => network(a, threads),
        Command::Simulate(a) => simulate(a, threads),
        Command::Bench(a) => bench(a, threads),
    }
}

fn fit_options(c: &Common) -> FitOptions {
    FitOptions {
        tol: c.tol,
        max_iter: c.max_iter,
        tau_shape: match c.tau_shape {
            TauShapeArg::Half => TauShape::Half,
            TauShapeArg::Quarter => TauShape::Quarter,
        },
        ..FitOptions::default()
    }
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Pinc => Variant::PInc,
        VariantArg::Pinc2 => Variant::PInc2,
    }
}

/// Echo of the effective configuration.
fn config_json<T: serde::Serialize>(command: &str, args: &T, threads: usize) -> Value {
    let mut v = serde_json::to_value(args).expect("arguments serialize");
    v["command"] = json!(command);
    v["threads"] = json!(threads);
    v
}

fn eb_json(fit: &EbFit) -> Value {
    json!({
        "iterations": fit.iterations,
        "converged": fit.converged,
        "degenerate_groups": fit.trace.degenerate_groups,
    })
}

fn write_timings(out: &Path, timings: Value) -> Result<(), CliError> {
    write_json(&out.join("timings.json"), &json!({ "schema_version": SCHEMA_VERSION, "seconds": timings }))
}

fn write_trace(out: &Path, fit: &EbFit) -> Result<(), CliError> {
    let path = out.join("eb_trace.csv");
    let mut w = csv_writer(&path)?;
    let groups = fit.hyper.num_groups();
    let mut header = vec!["iteration".to_string(), "total_elbo".into(), "max_delta".into()];
    for g in 1..=groups {
        header.extend([format!("a_{g}"), format!("b_{g}"), format!("pooled_tau_sq_{g}")]);
    }
    write_row(&mut w, &path, &header)?;
    for rec in &fit.trace.records {
        let mut row = vec![rec.iteration.to_string(), fmt_f64(rec.total_elbo), fmt_f64(rec.max_delta)];
        for g in 0..groups {
            row.extend([fmt_f64(rec.a[g]), fmt_f64(rec.b[g]), fmt_f64(rec.pooled_tau_sq[g])]);
        }
        write_row(&mut w, &path, &row)?;
    }
    finish(w, &path)
}

/// Per-task selection, run in parallel. Each task's folds come from its own
/// stream of the master seed.
fn select_all(
    tasks: &[RegressionTask],
    fit: &EbFit,
    selector: SelectorArg,
    opts: &FitOptions,
    folds: usize,
    seed: u64,
) -> Result<Option<Vec<SelectionResult>>, CliError> {
    if selector == SelectorArg::None {
        return Ok(None);
    }
    let out: Vec<SelectionResult> = tasks
        .par_iter()
        .zip(&fit.summaries)
        .enumerate()
        .map(|(i, (task, summary))| match selector {
            SelectorArg::Threshold => threshold_select(task, &fit.hyper, summary, opts),
            _ => {
                let dss = DssOptions {
                    folds,
                    seed: replicate_seed(seed, i as u64, Purpose::Folds),
                };
                dss_select(task, &fit.hyper, &summary.means, opts, &dss)
            }
        })
        .collect::<shrinkhs_core::Result<_>>()?;
    Ok(Some(out))
}

fn selection_json(sel: Option<&SelectionResult>) -> Value {
    match sel {
        None => Value::Null,
        Some(s) => json!({
            "method": s.method,
            "chosen_level": s.chosen_level,
            "num_selected": s.num_selected(),
        }),
    }
}

fn fit(args: &FitArgs, selector: SelectorArg, command: &str, threads: usize) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let out = &args.common.out;
    let mut response = read_table(&args.response)?;
    let mut designs: Vec<Table> = args.design.iter().map(|p| read_table(p)).collect::<Result<_, _>>()?;
    if args.standardize {
        standardize(&mut response.values);
        for d in &mut designs {
            standardize(&mut d.values);
        }
    }
    let groups = args.groups.as_deref().map(read_groups).transpose()?;
    let tasks = build_tasks(&response, &designs, groups.as_deref())?;
    let loaded = started.elapsed().as_secs_f64();

    let opts = fit_options(&args.common);
    let hyper0 = Hyperparams::initial(infer_num_groups(&tasks), variant(args.variant));
    let t = Instant::now();
    let fit = eb::run(&tasks, &hyper0, &opts)?;
    let fit_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let selections = select_all(&tasks, &fit, selector, &opts, args.folds, args.common.seed)?;
    let select_secs = t.elapsed().as_secs_f64();

    let path = out.join("coefficients.csv");
    let mut w = csv_writer(&path)?;
    write_row(&mut w, &path, ["task", "response", "index", "name", "group", "mean", "sd", "kappa", "selected"])?;
    for (i, (task, summary)) in tasks.iter().zip(&fit.summaries).enumerate() {
        let names = &designs[if designs.len() == 1 { 0 } else { i }].names;
        for t in 0..task.s() {
            let selected = selections.as_ref().is_some_and(|s| s[i].selected[t]);
            write_row(
                &mut w,
                &path,
                [
                    task.index.to_string(),
                    response.names[i].clone(),
                    (t + 1).to_string(),
                    names[t].clone(),
                    task.groups[t].to_string(),
                    fmt_f64(summary.means[t]),
                    fmt_f64(summary.sds[t]),
                    fmt_f64(summary.kappa[t]),
                    selected.to_string(),
                ],
            )?;
        }
    }
    finish(w, &path)?;
    write_trace(out, &fit)?;

    let mut cfg = config_json(command, args, threads);
    cfg["selector"] = json!(selector);
    let task_json: Vec<Value> = tasks
        .iter()
        .zip(&fit.summaries)
        .enumerate()
        .map(|(i, (task, s))| {
            json!({
                "task": task.index,
                "response": response.names[i],
                "n": task.n(),
                "s": task.s(),
                "elbo": s.elbo,
                "converged": fit.converged,
                "selection": selection_json(selections.as_ref().map(|v| &v[i])),
            })
        })
        .collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": cfg,
            "hyper": fit.hyper,
            "eb": eb_json(&fit),
            "tasks": task_json,
        }),
    )?;
    write_timings(
        out,
        json!({ "load": loaded, "fit": fit_secs, "select": select_secs, "total": started.elapsed().as_secs_f64() }),
    )?;
    Ok(Outcome { converged: fit.converged })
}

fn network(args: &NetworkArgs, threads: usize) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let out = &args.common.out;
    let mut data = read_table(&args.data)?;
    if args.standardize {
        standardize(&mut data.values);
    }
    let p = data.ncols();
    let prior = args.prior.as_deref().map(|path| read_adjacency(path, p)).transpose()?;
    let tasks = build_regression_system(&data.values, prior.as_ref())?;

    let opts = fit_options(&args.common);
    let hyper0 = Hyperparams::initial(infer_num_groups(&tasks), variant(args.variant));
    let t = Instant::now();
    let fit = eb::run(&tasks, &hyper0, &opts)?;
    let fit_secs = t.elapsed().as_secs_f64();
    let selections = select_all(&tasks, &fit, args.selector, &opts, args.folds, args.common.seed)?;
    let masks: Option<Vec<Vec<bool>>> = selections.as_ref().map(|v| v.iter().map(|s| s.selected.clone()).collect());
    let net = assemble_network(&fit.summaries, masks.as_deref())?;

    let path = out.join("coefficients.csv");
    let mut w = csv_writer(&path)?;
    write_row(&mut w, &path, ["task", "response", "index", "name", "group", "mean", "sd", "kappa", "selected"])?;
    for (i, (task, summary)) in tasks.iter().zip(&fit.summaries).enumerate() {
        for (t, node) in other_nodes(p, i).enumerate() {
            let selected = masks.as_ref().is_some_and(|m| m[i][t]);
            write_row(
                &mut w,
                &path,
                [
                    task.index.to_string(),
                    data.names[i].clone(),
                    (node + 1).to_string(),
                    data.names[node].clone(),
                    task.groups[t].to_string(),
                    fmt_f64(summary.means[t]),
                    fmt_f64(summary.sds[t]),
                    fmt_f64(summary.kappa[t]),
                    selected.to_string(),
                ],
            )?;
        }
    }
    finish(w, &path)?;

    let path = out.join("edges.csv");
    let mut w = csv_writer(&path)?;
    write_row(&mut w, &path, ["node_i", "node_j", "name_i", "name_j", "strength"])?;
    for &(i, j) in &net.edges {
        write_row(
            &mut w,
            &path,
            [(i + 1).to_string(), (j + 1).to_string(), data.names[i].clone(), data.names[j].clone(), fmt_f64(net.strength[(i, j)])],
        )?;
    }
    finish(w, &path)?;
    write_trace(out, &fit)?;

    let task_json: Vec<Value> = tasks
        .iter()
        .zip(&fit.summaries)
        .enumerate()
        .map(|(i, (task, s))| {
            json!({
                "task": task.index,
                "response": data.names[i],
                "elbo": s.elbo,
                "converged": fit.converged,
                "selection": selection_json(selections.as_ref().map(|v| &v[i])),
            })
        })
        .collect();
    let prior_means: Vec<f64> = (0..fit.hyper.num_groups()).map(|g| fit.hyper.prior_mean_inv_tau_sq(g)).collect();
    write_json(
        &out.join("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": config_json("network", args, threads),
            "nodes": p,
            "observations": data.nrows(),
            "num_edges": net.edges.len(),
            "hyper": fit.hyper,
            "prior_mean_inv_tau_sq": prior_means,
            "eb": eb_json(&fit),
            "tasks": task_json,
        }),
    )?;
    write_timings(out, json!({ "fit": fit_secs, "total": started.elapsed().as_secs_f64() }))?;
    Ok(Outcome { converged: fit.converged })
}

fn simulate(args: &SimulateArgs, threads: usize) -> Result<Outcome, CliError> {
    let out = &args.common.out;
    let topology = match args.topology {
        TopologyArg::Band => Topology::Band { bandwidth: args.bandwidth },
        TopologyArg::Cluster => Topology::Cluster { clusters: args.clusters, prob: args.prob },
        TopologyArg::Hub => Topology::Hub { hubs: args.hubs },
    };
    let prior = match (args.prior, args.prior_corruption) {
        (PriorArg::None, false) => PriorMode::None,
        (PriorArg::None, true) => return Err(CliError::Usage("--prior-corruption needs --prior true".into())),
        (PriorArg::True, false) => PriorMode::True,
        (PriorArg::True, true) => PriorMode::Corrupted,
    };
    let mut methods: Vec<Method> = Vec::new();
    for m in &args.methods {
        let m = match m {
            MethodArg::Pinc => Method::PInc,
            MethodArg::Pinc2 => Method::PInc2,
            MethodArg::Ridge => Method::Ridge,
        };
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let cfg = SimulationConfig {
        topology,
        n: args.n,
        p: args.p,
        reps: args.reps,
        seed: args.common.seed,
        methods: methods.clone(),
        prior,
        fit: fit_options(&args.common),
    };
    let started = Instant::now();
    let sim = netsim::simulate(&cfg)?;

    let path = out.join("metrics.csv");
    let mut w = csv_writer(&path)?;
    write_row(
        &mut w,
        &path,
        ["topology", "n", "p", "method", "prior", "replicate", "err0", "err1", "auc", "iterations", "converged", "prior_mean_1", "prior_mean_2"],
    )?;
    for r in &sim.results {
        let pm = |g: usize| r.prior_mean_inv_tau_sq.get(g).copied().map(fmt_f64).unwrap_or_default();
        write_row(
            &mut w,
            &path,
            [
                r.topology.clone(),
                r.n.to_string(),
                r.p.to_string(),
                r.method.name().into(),
                r.prior.name().into(),
                (r.replicate + 1).to_string(),
                fmt_f64(r.err0),
                fmt_f64(r.err1),
                fmt_opt(r.auc),
                r.iterations.to_string(),
                r.converged.to_string(),
                pm(0),
                pm(1),
            ],
        )?;
    }
    finish(w, &path)?;

    let path = out.join("roc.csv");
    let mut w = csv_writer(&path)?;
    write_row(&mut w, &path, ["method", "prior", "replicate", "fpr", "tpr"])?;
    for (r, roc) in sim.results.iter().zip(&sim.roc) {
        for &(fpr, tpr) in &roc.points {
            write_row(
                &mut w,
                &path,
                [r.method.name().into(), r.prior.name().into(), (r.replicate + 1).to_string(), fmt_f64(fpr), fmt_f64(tpr)],
            )?;
        }
    }
    finish(w, &path)?;

    let path = out.join("timings.csv");
    let mut w = csv_writer(&path)?;
    write_row(&mut w, &path, ["method", "replicate", "seconds"])?;
    for r in &sim.results {
        write_row(&mut w, &path, [r.method.name().into(), (r.replicate + 1).to_string(), fmt_f64(r.seconds)])?;
    }
    finish(w, &path)?;

    let mut summary: Vec<Value> = Vec::new();
    for m in &methods {
        let rows: Vec<_> = sim.results.iter().filter(|r| r.method == *m).collect();
        let k = rows.len() as f64;
        let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
        summary.push(json!({
            "method": m.name(),
            "replicates": rows.len(),
            "mean_err0": rows.iter().map(|r| r.err0).sum::<f64>() / k,
            "mean_err1": rows.iter().map(|r| r.err1).sum::<f64>() / k,
            "mean_auc": if aucs.is_empty() { Value::Null } else { json!(aucs.iter().sum::<f64>() / aucs.len() as f64) },
            "not_converged": rows.iter().filter(|r| !r.converged).count(),
        }));
    }
    let mut config = config_json("simulate", args, threads);
    config["prior"] = json!(prior.name());
    write_json(
        &out.join("summary.json"),
        &json!({ "schema_version": SCHEMA_VERSION, "config": config, "methods": summary }),
    )?;
    write_timings(out, json!({ "total": started.elapsed().as_secs_f64() }))?;
    Ok(Outcome {
        converged: sim.results.iter().all(|r| r.converged),
    })
}

/// Bench task `r`: standard normal design, coefficients `(1.5, −1, 0, …)`
/// and unit noise, all from the replicate's data stream.
pub fn bench_task(seed: u64, r: usize, n: usize, s: usize) -> (RegressionTask, DVector<f64>) {
    let mut rng = replicate_rng(seed, r as u64, Purpose::Data);
    let x = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut beta = DVector::zeros(s);
    beta[0] = 1.5;
    if s > 1 {
        beta[1] = -1.0;
    }
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta + noise;
    (RegressionTask::single_group(r + 1, y, x), beta)
}

fn bench(args: &BenchArgs, threads: usize) -> Result<Outcome, CliError> {
    let out = &args.common.out;
    if args.tasks == 0 || args.n == 0 || args.s == 0 {
        return Err(CliError::Usage("bench needs --tasks, --n and --s of at least 1".into()));
    }
    let (tasks, truth): (Vec<RegressionTask>, Vec<DVector<f64>>) =
        (0..args.tasks).map(|r| bench_task(args.common.seed, r, args.n, args.s)).unzip();
    let opts = fit_options(&args.common);
    let t = Instant::now();
    let fit = eb::run(&tasks, &Hyperparams::initial(1, variant(args.variant)), &opts)?;
    let vb_secs = t.elapsed().as_secs_f64();

    let mcmc: Vec<_> = tasks
        .par_iter()
        .enumerate()
        .map(|(r, task)| {
            let mo = McmcOptions {
                n_iter: args.mcmc_iter,
                n_burnin: args.mcmc_burnin,
                seed: replicate_seed(args.common.seed, r as u64, Purpose::Mcmc),
                ..McmcOptions::default()
            };
            gibbs_fit(task, &fit.hyper, &mo)
        })
        .collect::<shrinkhs_core::Result<_>>()?;
    let gibbs_secs: f64 = mcmc.iter().map(|m| m.seconds).sum();

    let path = out.join("bench.csv");
    let mut w = csv_writer(&path)?;
    write_row(
        &mut w,
        &path,
        ["task", "index", "truth", "vb_mean", "vb_sd", "gibbs_mean", "gibbs_sd", "gibbs_mcse", "gibbs_ess", "abs_diff"],
    )?;
    let (mut vb_all, mut mc_all) = (Vec::new(), Vec::new());
    for (r, (summary, m)) in fit.summaries.iter().zip(&mcmc).enumerate() {
        let mcse = m.mcse();
        for t in 0..args.s {
            vb_all.push(summary.means[t]);
            mc_all.push(m.means[t]);
            write_row(
                &mut w,
                &path,
                [
                    (r + 1).to_string(),
                    (t + 1).to_string(),
                    fmt_f64(truth[r][t]),
                    fmt_f64(summary.means[t]),
                    fmt_f64(summary.sds[t]),
                    fmt_f64(m.means[t]),
                    fmt_f64(m.sds[t]),
                    fmt_f64(mcse[t]),
                    fmt_f64(m.ess[t]),
                    fmt_f64((summary.means[t] - m.means[t]).abs()),
                ],
            )?;
        }
    }
    finish(w, &path)?;

    let max_diff = vb_all.iter().zip(&mc_all).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    write_json(
        &out.join("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": config_json("bench", args, threads),
            "hyper": fit.hyper,
            "eb": eb_json(&fit),
            "max_abs_diff": max_diff,
            "correlation": correlation(&vb_all, &mc_all),
        }),
    )?;
    write_timings(
        out,
        json!({ "vb": vb_secs, "gibbs": gibbs_secs, "speedup": gibbs_secs / vb_secs.max(f64::MIN_POSITIVE) }),
    )?;
    Ok(Outcome { converged: fit.converged })
}

/// Pearson correlation; `None` when either side is constant.
fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}
