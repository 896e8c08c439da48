//! `pmgp`: command-line front end. Every command writes its artifacts plus a
//! `manifest.json` under `--out`; failures print a JSON error object to
//! stderr and exit with status 1.

mod commands;
mod failure;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmgp::approx::ApproxMethod;
use pmgp::gp::CovarianceKind;
use pmgp::io::RowFilter;

#[derive(Parser)]
#[command(name = "pmgp", version, about = "Fully Bayesian GP probit classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a class-balanced dataset from the GP probit model.
    Gen(GenArgs),
    /// Run MCMC chains over hyper-parameters and latents.
    Sample(SampleArgs),
    /// Predictive probabilities for a test set.
    Predict(PredictArgs),
    /// ESS, R̂ and acceptance for a finished `sample` run.
    Diagnose(DiagnoseArgs),
    /// Spread of the estimated posterior over a length-scale grid.
    Curve(CurveArgs),
    /// Efficiency and convergence table across schemes and seeds.
    Bench(BenchArgs),
    /// Capacity scores and AUC of stored predictions.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "isotropic")]
    kind: CovarianceKind,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Dataset location and how to read it.
#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    label_column: String,
    /// Standardize covariates; the statistics are saved for test data.
    #[arg(long)]
    standardize: bool,
    /// Keep rows whose column matches: `column=value1|value2`.
    #[arg(long)]
    filter: Option<RowFilter>,
}

/// Experiment settings: a TOML file, then `key=value` overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, required_unless_present = "replay")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    label_column: String,
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    filter: Option<RowFilter>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Re-run exactly the settings recorded in a previous manifest.
    #[arg(long, conflicts_with_all = ["config", "set", "data"])]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    test: PathBuf,
    /// Latent snapshots from `sample` (Monte Carlo predictive).
    #[arg(long, conflicts_with_all = ["sigma", "tau"])]
    latents: Option<PathBuf>,
    /// Point estimate of σ for approximation-based prediction.
    #[arg(long, requires = "tau")]
    sigma: Option<f64>,
    #[arg(long, requires = "sigma")]
    tau: Option<f64>,
    #[arg(long, default_value = "ep")]
    method: ApproxMethod,
    #[arg(long, default_value = "isotropic")]
    kind: CovarianceKind,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Output directory of a `sample` run.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2.08)]
    sigma: f64,
    /// `lo:hi:count`, evenly spaced.
    #[arg(long, default_value = "0.05:1.0:20")]
    taus: String,
    #[arg(long, value_delimiter = ',', default_value = "la,ep")]
    methods: Vec<ApproxMethod>,
    #[arg(long, value_delimiter = ',', default_value = "1,64")]
    n_imp: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Divide by the area under the mean curve.
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value = "isotropic")]
    kind: CovarianceKind,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Scheme rows: `PM:EP:64`, `PM:LA:1`, `AA`, `SURR`, `SA`.
    #[arg(long, value_delimiter = ',', default_value = "PM:EP:64,AA,SURR")]
    schemes: Vec<String>,
    /// Independent repetitions; repetition `r` uses master seed `seed + r`.
    #[arg(long, default_value_t = 1)]
    repeats: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `point_id,prob_positive,method` CSV from `predict`.
    #[arg(long)]
    predictions: PathBuf,
    /// Test set supplying the labels.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "y")]
    label_column: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Sample(a) => commands::sample(a),
        Command::Predict(a) => commands::predict(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Curve(a) => commands::curve(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::FAILURE
        }
    }
}
