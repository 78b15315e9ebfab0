mod cmd;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cadlag", version, about = "Variation-norm ERM: fitting, bracketing audits and rate experiments")]
struct Cli {
    /// Cap on worker threads
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the variation-norm constrained ERM to a CSV data set
    Fit(FitArgs),
    /// Evaluate a saved model at the points of a CSV file
    Predict(PredictArgs),
    /// Sectional variation norm of a saved model or grid function
    Svn(SvnArgs),
    /// Monte Carlo convergence-rate experiment
    SimulateRate(SimulateArgs),
    /// Bracketing audits (variation ball, CDF brute force, loss transform)
    BracketAudit(BracketArgs),
    /// Sub-exponential certification and Bernstein-norm audits
    BernsteinAudit(BernsteinArgs),
    /// Entropy-integral quadrature and bound ratio
    EntropyIntegral(EntropyArgs),
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// square, logistic or square-subexp
    #[arg(long)]
    pub loss: String,
    /// Variation-norm radius a_n; otherwise taken from the schedule at the sample size
    #[arg(long, required_unless_present = "A", conflicts_with = "A")]
    pub radius: Option<f64>,
    #[arg(long, default_value = "constant")]
    pub schedule: String,
    /// Schedule constant: a_n = A or A n^p
    #[arg(long = "A", id = "A")]
    pub a: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    /// Response bound used for the loss constants (default: max |y|, or the radius for logistic)
    #[arg(long)]
    pub a_tilde: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Gradient (KKT) tolerance
    #[arg(long, alias = "tol")]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub objective_tol: Option<f64>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with header x1..xd (a trailing y column is ignored)
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
pub struct SvnSource {
    /// Model JSON written by `fit`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Grid function JSON {dim, grid, values}
    #[arg(long)]
    pub function: Option<PathBuf>,
}

#[derive(Args)]
pub struct SvnArgs {
    #[command(flatten)]
    pub source: SvnSource,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Experiment config (.toml or .json)
    #[arg(long)]
    pub config: PathBuf,
    /// Report JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV of (n, replicate, d, runtime)
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// SVG log-log plot
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Per-replicate results, reused when the run is repeated
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum BracketClass {
    /// Composed brackets for the unit variation ball
    Ball,
    /// Greedy brute-force brackets for quantized 1-d CDFs
    Cdf,
    /// Bracket preservation under unimodal Lipschitz losses
    Loss,
}

#[derive(Args)]
pub struct BracketArgs {
    #[arg(long, value_enum, default_value = "ball")]
    pub class: BracketClass,
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Cells per axis of the base grid
    #[arg(long, default_value_t = 4)]
    pub grid_size: usize,
    /// Quantization levels (cdf class)
    #[arg(long, default_value_t = 5)]
    pub levels: u32,
    /// Random functions (ball class) or random brackets (loss class)
    #[arg(long, default_value_t = 200)]
    pub functions: usize,
    /// Extra random bracket indices checked for size (ball class)
    #[arg(long, default_value_t = 200)]
    pub random_brackets: usize,
    /// Response bound and clip level (loss class)
    #[arg(long, default_value_t = 2.0)]
    pub a_tilde: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BernsteinArgs {
    /// laplace, gaussian or centered_exponential
    #[arg(long, default_value = "laplace")]
    pub noise: String,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a_n: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 50)]
    pub repetitions: usize,
    /// Certify the noise parameters by Monte Carlo first
    #[arg(long)]
    pub certify: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EntropyArgs {
    #[arg(long, required_unless_present = "sweep")]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// delta in {1e-1, .., 1e-6} and d in {1, 2, 3}
    #[arg(long, conflicts_with = "delta")]
    pub sweep: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.command {
        Command::Fit(a) => cmd::fit(a),
        Command::Predict(a) => cmd::predict(a),
        Command::Svn(a) => cmd::svn(a),
        Command::SimulateRate(a) => cmd::simulate(a),
        Command::BracketAudit(a) => cmd::bracket_audit(a),
        Command::BernsteinAudit(a) => cmd::bernstein_audit(a),
        Command::EntropyIntegral(a) => cmd::entropy_integral(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", cmd::error_body(&e));
            ExitCode::from(1)
        }
    }
}
