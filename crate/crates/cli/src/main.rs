use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use condexp::experiments::SampleDesign;
use condexp::{
    fit, heuristic_bandwidth, load_model, run_experiment, save_model, CenterSelection, ErrorKind,
    ExperimentConfig, ExperimentKind, FitParams, KernelFamily, KernelSpec, Regularization,
};

mod table;

/// Centers used by `fit` when `--m` is not given (capped at the sample count).
const DEFAULT_CENTERS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] condexp::Error),

    #[error("{}: line {line}: {msg}", path.display())]
    Csv {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
            CliError::Csv { .. } | CliError::Io { .. } | CliError::Data(_) => 2,
        }
    }
}

/// Estimate conditional expectations E[y | x] with a regularized kernel inverse problem.
#[derive(Debug, Parser)]
#[command(name = "condexp", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a CSV table with header `x1,...,xd,y`.
    Fit(FitArgs),
    /// Evaluate a saved model at the points of a CSV table with header `x1,...,xd`.
    Eval(EvalArgs),
    /// Run a synthetic experiment and write its report and plot data.
    Experiment(ExperimentArgs),
    /// Sample-size sweep of the curve experiment (same as `experiment convergence`).
    Convergence(ExperimentOptions),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Centers {
    /// Evenly strided samples.
    Stride,
    /// Uniformly drawn samples, seeded by `--seed`.
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Design {
    Uniform,
    LowDiscrepancy,
}

impl From<Design> for SampleDesign {
    fn from(d: Design) -> Self {
        match d {
            Design::Uniform => SampleDesign::Uniform,
            Design::LowDiscrepancy => SampleDesign::LowDiscrepancy,
        }
    }
}

/// Hyperparameters shared by `fit` and the experiments.
#[derive(Debug, Args)]
struct ModelOptions {
    /// Number of kernel centers M.
    #[arg(long)]
    m: Option<usize>,
    /// Smoothing bandwidth; defaults to 0.05 times the median squared pairwise distance.
    #[arg(long)]
    delta: Option<f64>,
    /// Bandwidth of the Markov kernel [default: delta].
    #[arg(long)]
    markov_bw: Option<f64>,
    /// Kernel of the model: gaussian, markov-gaussian, diffusion, symmetrized-diffusion.
    #[arg(long, default_value = "diffusion")]
    kernel: KernelFamily,
    /// Bandwidth of the model kernel [default: delta].
    #[arg(long)]
    kernel_bw: Option<f64>,
    /// Absolute regularization; defaults to 1e-6 times the largest squared singular value.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training table.
    #[arg(long, short)]
    input: PathBuf,
    /// Where to write the model (JSON).
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelOptions,
    /// Regularization as a multiple of the largest squared singular value.
    #[arg(long, conflicts_with = "epsilon")]
    epsilon_rel: Option<f64>,
    /// How centers are picked from the samples.
    #[arg(long, value_enum, default_value_t = Centers::Stride)]
    centers: Centers,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Query table.
    #[arg(long, short)]
    points: PathBuf,
    /// Output table; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// image, curve, variance or convergence.
    kind: ExperimentKind,
    #[command(flatten)]
    options: ExperimentOptions,
}

#[derive(Debug, Args)]
struct ExperimentOptions {
    /// Output directory [default: condexp-<kind>].
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample count (curve, variance) [default: 4000, 8000 for variance].
    #[arg(long)]
    n: Option<usize>,
    /// Sample counts of the convergence sweep.
    #[arg(long, value_delimiter = ',', default_value = "250,1000,4000")]
    sizes: Vec<usize>,
    /// Seeds per size in the convergence sweep.
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    /// Sample design of the curve experiments.
    #[arg(long, value_enum, default_value_t = Design::Uniform)]
    design: Design,
    /// Frequency of the test image.
    #[arg(long, default_value_t = 2)]
    kappa: u32,
    /// Pixels per side of the test image.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Standard deviation of the image noise.
    #[arg(long, default_value_t = condexp::experiments::DEFAULT_IMAGE_NOISE)]
    noise: f64,
    /// Evaluation grid size of the one-dimensional experiments.
    #[arg(long, default_value_t = condexp::experiments::DEFAULT_EVAL_POINTS)]
    eval_points: usize,
    /// Fraction of each side left out of the error metrics.
    #[arg(long, default_value_t = condexp::experiments::DEFAULT_MARGIN)]
    margin: f64,
    #[command(flatten)]
    model: ModelOptions,
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let data = table::read_dataset(&args.input)?;
    let opts = &args.model;
    let delta = match opts.delta {
        Some(d) => d,
        None => heuristic_bandwidth(data.xs())?,
    };
    let epsilon = match (opts.epsilon, args.epsilon_rel) {
        (Some(e), _) => Regularization::Absolute(e),
        (None, Some(f)) => Regularization::Relative(f),
        (None, None) => Regularization::default(),
    };
    let params = FitParams {
        kernel: KernelSpec::new(opts.kernel, opts.kernel_bw.unwrap_or(delta))?,
        delta,
        markov_bw: opts.markov_bw.unwrap_or(delta),
        epsilon,
        m: opts.m.unwrap_or(DEFAULT_CENTERS.min(data.len())),
        centers: match args.centers {
            Centers::Stride => CenterSelection::Stride,
            Centers::Random => CenterSelection::Random { seed: args.seed },
        },
    };
    let (model, report) = fit(&data, &params)?;
    save_model(&model, &args.out)?;
    let meta = model.fit_meta();
    println!("samples         {}", meta.n);
    println!("centers         {}", meta.m);
    println!("delta           {}", meta.delta);
    println!("markov_bw       {}", meta.markov_bw);
    println!("epsilon         {:e}", meta.epsilon);
    println!("residual_norm   {:e}", report.residual_norm);
    println!("rhs_norm        {:e}", report.rhs_norm);
    println!("effective_rank  {}", report.effective_rank);
    println!("elapsed_ms      {}", start.elapsed().as_millis());
    println!("model           {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let csv = match table::read_points(&args.points)? {
        None => String::new(),
        Some((dim, points)) => {
            if dim != model.dim() {
                return Err(CliError::Data(format!(
                    "{}: points have {dim} coordinates but the model expects d = {}",
                    args.points.display(),
                    model.dim()
                )));
            }
            let predictions = model.evaluate(&points)?;
            table::predictions_csv(dim, &points, &predictions)
        }
    };
    match args.out {
        Some(path) => table::write_atomic(&path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn experiment_config(kind: ExperimentKind, o: &ExperimentOptions) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.seed = o.seed;
    if let Some(n) = o.n {
        cfg.n = n;
    }
    cfg.sizes = o.sizes.clone();
    cfg.seeds = o.seeds;
    cfg.design = o.design.into();
    cfg.kappa = o.kappa;
    cfg.grid = o.grid;
    cfg.noise_std = o.noise;
    cfg.eval_points = o.eval_points;
    cfg.margin = o.margin;
    cfg.kernel_family = o.model.kernel;
    cfg.m = o.model.m;
    cfg.delta = o.model.delta;
    cfg.markov_bw = o.model.markov_bw;
    cfg.kernel_bw = o.model.kernel_bw;
    cfg.epsilon = o.model.epsilon;
    cfg
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Image => "image",
        ExperimentKind::Curve => "curve",
        ExperimentKind::Variance => "variance",
        ExperimentKind::Convergence => "convergence",
    }
}

fn cmd_experiment(kind: ExperimentKind, opts: ExperimentOptions) -> Result<(), CliError> {
    let cfg = experiment_config(kind, &opts);
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("condexp-{}", kind_name(kind))));
    let report = run_experiment(&cfg)?;
    report.write_to_dir(&out)?;
    println!("experiment              {}", kind_name(kind));
    println!("rmse_vs_truth           {}", report.rmse_vs_truth);
    println!("rmse_vs_smoothed_truth  {}", report.rmse_vs_smoothed_truth);
    println!("relative_rmse_vs_truth  {}", report.relative_rmse_vs_truth);
    if let Some(rows) = &report.convergence {
        println!("n       median_rmse_vs_smoothed_truth  median_rmse_vs_truth");
        for r in rows {
            println!(
                "{:<7} {:<30} {}",
                r.n, r.median_rmse_vs_smoothed_truth, r.median_rmse_vs_truth
            );
        }
    }
    println!("runtime_ms              {}", report.runtime_ms);
    println!("output                  {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Experiment(args) => cmd_experiment(args.kind, args.options),
        Command::Convergence(opts) => cmd_experiment(ExperimentKind::Convergence, opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
