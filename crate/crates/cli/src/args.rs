//! Command-line grammar and the `key=value` config file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "shrinkhs", version, about = "Grouped horseshoe regression by empirical-Bayes variational inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit one regression per response column.
    Fit(FitArgs),
    /// Fit, then select variables (threshold selection unless told otherwise).
    Select(FitArgs),
    /// Reconstruct a network from node-wise regressions.
    Network(NetworkArgs),
    /// Run the simulation protocol on generated networks.
    Simulate(SimulateArgs),
    /// Compare variational and sampled posterior means.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Select(_) => "select",
            Command::Network(_) => "network",
            Command::Simulate(_) => "simulate",
            Command::Bench(_) => "bench",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Fit(a) | Command::Select(a) => &a.common,
            Command::Network(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Bench(a) => &a.common,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Convergence tolerance on the bound.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; falls back to SHRINKHS_THREADS, then to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = TauShapeArg::Half)]
    pub tau_shape: TauShapeArg,
    /// File of `key=value` lines supplying defaults for the other flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// CSV whose columns are the responses, one task per column.
    #[arg(long)]
    pub response: PathBuf,
    /// Design CSV: once for a design shared by every task, or once per task.
    #[arg(long, required = true)]
    pub design: Vec<PathBuf>,
    /// Group labels, one row per task after a header line; rows may differ in length.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Pinc)]
    pub variant: VariantArg,
    /// Defaults to `none` for fit and `threshold` for select.
    #[arg(long, value_enum)]
    pub selector: Option<SelectorArg>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Centre and scale every column to unit variance first.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetworkArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Observations by nodes, with a header of node names.
    #[arg(long)]
    pub data: PathBuf,
    /// Square 0/1 adjacency (with header) marking prior edges.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Pinc)]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value_t = SelectorArg::Threshold)]
    pub selector: SelectorArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = TopologyArg::Band)]
    pub topology: TopologyArg,
    #[arg(long, default_value_t = 2)]
    pub bandwidth: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    /// Within-cluster edge probability.
    #[arg(long, default_value_t = 0.3)]
    pub prob: f64,
    #[arg(long, default_value_t = 5)]
    pub hubs: usize,
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Edge information handed to the fit as group labels.
    #[arg(long, value_enum, default_value_t = PriorArg::None)]
    pub prior: PriorArg,
    /// Swap half of the prior's edges for non-edges.
    #[arg(long)]
    pub prior_corruption: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MethodArg::Pinc, MethodArg::Pinc2, MethodArg::Ridge])]
    pub methods: Vec<MethodArg>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 20)]
    pub tasks: usize,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    /// Covariates per task; the first two carry signal 1.5 and -1.
    #[arg(long, default_value_t = 10)]
    pub s: usize,
    #[arg(long, value_enum, default_value_t = VariantArg::Pinc)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 40_000)]
    pub mcmc_iter: usize,
    #[arg(long, default_value_t = 20_000)]
    pub mcmc_burnin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Pinc,
    Pinc2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorArg {
    Threshold,
    Dss,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TauShapeArg {
    Half,
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyArg {
    Band,
    Cluster,
    Hub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorArg {
    None,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Pinc,
    Pinc2,
    Ridge,
}

/// Parses `argv`, filling flags absent from the command line from the
/// config file named by `--config`.
pub fn parse_args<I, T>(argv: I) -> Result<Cli, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let matches = Cli::command().try_get_matches_from(&argv).map_err(usage)?;
    let (sub_name, sub) = matches.subcommand().expect("subcommand is required");
    let Some(path) = sub.get_one::<PathBuf>("config").cloned() else {
        return Cli::from_arg_matches(&matches).map_err(usage);
    };

    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(sub_name).expect("matched subcommand exists");
    for (key, value) in read_config(&path)? {
        let id = key.replace('-', "_");
        let Some(arg) = sub_cmd.get_arguments().find(|a| a.get_id() == id.as_str()) else {
            return Err(CliError::Usage(format!("{}: unknown key '{key}'", path.display())));
        };
        if id == "config" {
            return Err(CliError::Usage(format!("{}: config files cannot nest", path.display())));
        }
        if sub.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", arg.get_long().unwrap_or(&id));
        if arg.get_action().takes_values() {
            argv.push(flag.into());
            argv.push(value.into());
        } else {
            match value.as_str() {
                "true" => argv.push(flag.into()),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: '{key}' is a switch and takes true or false, got '{other}'",
                        path.display()
                    )))
                }
            }
        }
    }
    Cli::try_parse_from(&argv).map_err(usage)
}

fn usage(e: clap::Error) -> CliError {
    CliError::Clap(e)
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{}:{}: expected key=value", path.display(), k + 1)));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}
