//! `dpfmix`: calibrate, release, sweep and evaluate from the command line.
//!
//! Every subcommand takes its keys as flags or from a JSON file given with
//! `--config`; flags win, unknown keys are rejected. The resolved keys are
//! written back into a manifest next to the outputs, and feeding that
//! manifest to `--config` reproduces the run.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "dpfmix",
    version,
    about = "Differentially private feature mixup"
)]
struct Cli {
    /// JSON file with keys for the subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Noise multipliers for a privacy budget.
    Calibrate(CalibrateArgs),
    /// Release a private mixup dataset.
    Release(ReleaseCmd),
    /// Empirical m* sweep and slope fit over several n.
    Sweep(SweepArgs),
    /// Per-coordinate noise of the GDP and RDP accountants across m.
    AccountantCompare(CompareArgs),
    /// Distance between exact composition and its Gaussian limit.
    CltConvergence(CltArgs),
    /// A trade-off curve as alpha,beta samples.
    TradeoffCurve(CurveArgs),
    /// Train on a release and report utility and membership leakage.
    TrainEval(TrainArgs),
    /// Write a balanced synthetic classification dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateArgs {
    /// Input size [default: 50000].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// Mixup degree [default: 64].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    /// Output size [default: 50000].
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Feature clipping norm [default: 1].
    #[arg(long = "Cx")]
    #[serde(rename = "Cx", skip_serializing_if = "Option::is_none")]
    pub c_x: Option<f64>,
    /// Label clipping norm [default: 1].
    #[arg(long = "Cy")]
    #[serde(rename = "Cy", skip_serializing_if = "Option::is_none")]
    pub c_y: Option<f64>,
    /// Noise ratio sigma_y / sigma_x [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(CalibrateArgs {
    n,
    m,
    t,
    eps,
    delta,
    mu,
    c_x,
    c_y,
    lambda,
    output
});

#[derive(Debug, Args)]
pub struct ReleaseCmd {
    #[command(flatten)]
    pub keys: ReleaseArgs,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseArgs {
    /// CSV file or binary dataset directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Master seed [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long = "Cx")]
    #[serde(rename = "Cx", skip_serializing_if = "Option::is_none")]
    pub c_x: Option<f64>,
    #[arg(long = "Cy")]
    #[serde(rename = "Cy", skip_serializing_if = "Option::is_none")]
    pub c_y: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Matrix file replacing the input features row for row.
    #[arg(long)]
    #[serde(rename = "features-from", skip_serializing_if = "Option::is_none")]
    pub features_from: Option<PathBuf>,
}
config::merge_fields!(ReleaseArgs {
    input,
    output,
    m,
    t,
    eps,
    delta,
    mu,
    seed,
    c_x,
    c_y,
    lambda,
    features_from
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// Output size exponent, T = round(2 n^gamma).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Comma-separated input sizes.
    #[arg(long, value_delimiter = ',')]
    #[serde(rename = "n-list", skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// [default: 2]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// [default: 20]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// exact or moment [default: exact].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    /// pow2 or geometric:<steps per octave> [default: pow2].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Dimension [default: 100].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// [default: 14]
    #[arg(long = "Cx")]
    #[serde(rename = "Cx", skip_serializing_if = "Option::is_none")]
    pub c_x: Option<f64>,
    /// [default: 36]
    #[arg(long = "Cy")]
    #[serde(rename = "Cy", skip_serializing_if = "Option::is_none")]
    pub c_y: Option<f64>,
    /// [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(SweepArgs {
    gamma,
    n_list,
    mu,
    repeats,
    seed,
    engine,
    grid,
    p,
    c_x,
    c_y,
    lambda,
    output
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareArgs {
    /// [default: 50000]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// [default: 50000]
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    /// [default: 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// [default: 1e-5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Comma-separated mixup degrees [default: 1,2,4,...,16384].
    #[arg(long, value_delimiter = ',')]
    #[serde(rename = "m-list", skip_serializing_if = "Option::is_none")]
    pub m_list: Option<Vec<u64>>,
    /// CSV file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(CompareArgs {
    n,
    t,
    eps,
    delta,
    m_list,
    output
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltArgs {
    /// Limit mu [default: 0.5016].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Per-step effective noise multiplier [default: 0.8441].
    #[arg(long = "sigma-eff")]
    #[serde(rename = "sigma-eff", skip_serializing_if = "Option::is_none")]
    pub sigma_eff: Option<f64>,
    /// Comma-separated composition counts [default: 10,50,200].
    #[arg(long = "T-list", value_delimiter = ',')]
    #[serde(rename = "T-list", skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<u64>>,
    /// [default: 100001]
    #[arg(long = "grid-size")]
    #[serde(rename = "grid-size", skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// CSV file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(CltArgs {
    mu,
    sigma_eff,
    t_list,
    grid_size,
    output
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveArgs {
    /// Gaussian trade-off G_mu.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Subsampling rate of an exactly composed step.
    #[arg(long = "sample-rate")]
    #[serde(rename = "sample-rate", skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    /// Effective noise multiplier of an exactly composed step.
    #[arg(long = "sigma-eff")]
    #[serde(rename = "sigma-eff", skip_serializing_if = "Option::is_none")]
    pub sigma_eff: Option<f64>,
    /// Number of composed steps.
    #[arg(long = "T")]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<u64>,
    /// [default: 100001]
    #[arg(long = "grid-size")]
    #[serde(rename = "grid-size", skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    /// CSV file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(CurveArgs {
    mu,
    sample_rate,
    sigma_eff,
    t,
    grid_size,
    output
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// Release directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub release: Option<PathBuf>,
    /// Clean training records (members), CSV or binary directory.
    #[arg(long = "train-clean")]
    #[serde(rename = "train-clean", skip_serializing_if = "Option::is_none")]
    pub train_clean: Option<PathBuf>,
    /// Clean held-out records (nonmembers).
    #[arg(long = "test-clean")]
    #[serde(rename = "test-clean", skip_serializing_if = "Option::is_none")]
    pub test_clean: Option<PathBuf>,
    /// [default: 200]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// [default: 256]
    #[arg(long = "batch-size")]
    #[serde(rename = "batch-size", skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Metrics JSON file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Also save the model as <stem>.dpfm and <stem>.json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}
config::merge_fields!(TrainArgs {
    release,
    train_clean,
    test_clean,
    epochs,
    batch_size,
    lr,
    seed,
    output,
    checkpoint
});

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// Rows [default: 1000].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Features [default: 10].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Classes [default: 10].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    /// Scale of the class means [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Fixes the class means [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Independent sample index under the same means [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw: Option<u64>,
    /// CSV file, or a directory for the binary format.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}
config::merge_fields!(SynthArgs {
    n,
    p,
    classes,
    separation,
    seed,
    draw,
    output
});

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Lib(dpfmix::Error),
}

impl From<dpfmix::Error> for CliError {
    fn from(e: dpfmix::Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dpfmix::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 5,
            CliError::Lib(e) => match e {
                E::Ingestion { .. } | E::Io(_) => 3,
                E::Accuracy(_) | E::Singular { .. } | E::Training { .. } => 4,
                E::Config(_) | E::Domain(_) => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = cli.config.as_ref();
    let outcome = match cli.command {
        Command::Calibrate(a) => {
            config::resolve(a, file, "calibrate").and_then(commands::calibrate)
        }
        Command::Release(c) => {
            config::resolve(c.keys, file, "release").and_then(|k| commands::release(k, c.force))
        }
        Command::Sweep(a) => config::resolve(a, file, "sweep").and_then(commands::sweep),
        Command::AccountantCompare(a) => {
            config::resolve(a, file, "accountant-compare").and_then(commands::accountant_compare)
        }
        Command::CltConvergence(a) => {
            config::resolve(a, file, "clt-convergence").and_then(commands::clt_convergence)
        }
        Command::TradeoffCurve(a) => {
            config::resolve(a, file, "tradeoff-curve").and_then(commands::tradeoff_curve)
        }
        Command::TrainEval(a) => {
            config::resolve(a, file, "train-eval").and_then(commands::train_eval)
        }
        Command::Synth(a) => config::resolve(a, file, "synth").and_then(commands::synth),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpfmix: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
