//! `distgp`: dataset generation, distance matrices, GP training, prediction,
//! and the three-pipeline benchmark, over the file formats defined in the
//! `distgp` library.
//!
//! Exit codes: 0 success, 1 usage error (bad flags), 2 data or format error
//! (unreadable or inconsistent files, incompatible input classes), 3
//! numerical error (factorization or optimization failure, domain errors).
//!
//! All randomness derives from the single `--seed` flag: the dataset draw
//! uses it directly, `train` offsets it by 1 for the optimizer, and the
//! benchmark offsets it per pipeline. `--threads` caps the worker pool
//! without changing any output byte (RAYON_NUM_THREADS is honored when the
//! flag is absent).

#![forbid(unsafe_code)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use distgp::distances::{distance_matrix, DistanceFamily, DistanceMatrix, DistanceSpec, QuadratureConfig};
use distgp::experiments::{
    generate_training_set, run_benchmark, BenchmarkConfig, GridSpec, PipelineOutcome,
    TargetFunction,
};
use distgp::gp::{optimize_hyperparameters, OptimizeConfig, PredictionResult, TrainedGP};
use distgp::io::{
    read_distance_csv, read_inputs_json, read_json_file, save_model, write_distance_csv,
    write_grid_csv, write_json_file, write_predictions_csv, DatasetFile, InputSelection,
    load_model,
};
use distgp::kernels::{KernelFamily, MaternNu};
use distgp::Error;

/// Optimizer seed offset for the train subcommand (the dataset draw uses the
/// seed itself; benchmark pipelines use their own offsets internally).
const TRAIN_OPT_SEED_OFFSET: u64 = 1;

#[derive(Parser)]
#[command(name = "distgp", version, about = "Gaussian process regression over probability distributions")]
struct Cli {
    /// Master seed; every stage derives its randomness from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Cap the worker thread count (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: random Gaussians, their deterministic
    /// Dirac samples, and ground-truth targets.
    GenData(GenDataArgs),
    /// Compute the pairwise distance matrix over a dataset's inputs.
    Distances(DistancesArgs),
    /// Optimize hyperparameters on a precomputed distance matrix and save the
    /// fitted model.
    Train(TrainArgs),
    /// Predict at new inputs from a saved model.
    Predict(PredictArgs),
    /// Run the mCvMD-GP, Wasserstein-GP and mean-kernel-GP pipelines against
    /// the ground-truth surface and write grids plus a report.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of training Gaussians.
    #[arg(long, default_value_t = 200)]
    n_train: usize,

    /// Deterministic Dirac samples drawn per Gaussian.
    #[arg(long, default_value_t = 10)]
    samples: usize,

    /// Ground-truth target function (v1 or v2).
    #[arg(long, default_value = "v1")]
    target: String,

    /// Standard deviation of additive Gaussian label noise (default:
    /// noise-free targets).
    #[arg(long)]
    noise_sd: Option<f64>,

    /// Dataset JSON path to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct DistancesArgs {
    /// Dataset JSON produced by gen-data.
    #[arg(long)]
    data: PathBuf,

    /// Distance family: mcvmd, wasserstein, lp, total_variation, hellinger,
    /// jensen_shannon.
    #[arg(long, default_value = "mcvmd")]
    distance: String,

    /// Upper kernel-width bound for mcvmd.
    #[arg(long, default_value_t = distgp::distances::DEFAULT_B_MAX)]
    bmax: f64,

    /// Order for wasserstein and the L_p integral.
    #[arg(long, default_value_t = distgp::distances::DEFAULT_P)]
    p: f64,

    /// Simpson nodes for the quadrature families (odd, >= 3).
    #[arg(long, default_value_t = distgp::distances::DEFAULT_QUAD_NODES)]
    quad_nodes: usize,

    /// Which dataset list to measure: dirac (the deterministic samples) or
    /// gaussian (the originals).
    #[arg(long, default_value = "dirac")]
    inputs: String,

    /// Distance-matrix CSV path to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset JSON produced by gen-data.
    #[arg(long)]
    data: PathBuf,

    /// Distance-matrix CSV produced by the distances subcommand over the
    /// same dataset and input selection.
    #[arg(long)]
    matrix: PathBuf,

    /// Which dataset list the matrix was computed over (dirac or gaussian);
    /// these inputs are embedded in the model for later prediction.
    #[arg(long, default_value = "dirac")]
    inputs: String,

    /// Kernel family: se, exponential, matern, gamma_exponential,
    /// rational_quadratic, constant.
    #[arg(long, default_value = "se")]
    kernel: String,

    /// Matern smoothness, one of 0.5, 1.5, 2.5 (matern kernel only).
    #[arg(long)]
    matern_nu: Option<f64>,

    /// Exponent in (0, 2] (gamma_exponential kernel only).
    #[arg(long)]
    gamma: Option<f64>,

    /// Initial shape for the rational_quadratic kernel (optimized further).
    #[arg(long)]
    rq_alpha: Option<f64>,

    /// Multistart restarts for the hyperparameter search.
    #[arg(long, default_value_t = 8)]
    restarts: usize,

    /// Simplex iterations per restart.
    #[arg(long, default_value_t = 400)]
    max_iters: usize,

    /// Pin the noise variance instead of optimizing it.
    #[arg(long)]
    fix_noise: Option<f64>,

    /// Subtract the target mean before fitting; predictions add it back.
    #[arg(long)]
    center_targets: bool,

    /// Override the Simpson node count embedded in the model for later
    /// quadrature-family predictions.
    #[arg(long)]
    quad_nodes: Option<usize>,

    /// Model JSON path to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Model JSON produced by train.
    #[arg(long)]
    model: PathBuf,

    /// JSON list of input distributions to predict at.
    #[arg(long)]
    inputs: PathBuf,

    /// Predictions CSV path to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Ground-truth target function (v1 or v2).
    #[arg(long, default_value = "v1")]
    target: String,

    /// Number of training Gaussians.
    #[arg(long, default_value_t = 200)]
    n_train: usize,

    /// Deterministic Dirac samples drawn per Gaussian.
    #[arg(long, default_value_t = 10)]
    samples: usize,

    /// Evaluation grid nodes per axis (the grid is square).
    #[arg(long, default_value_t = 30)]
    grid: usize,

    /// Multistart restarts per pipeline.
    #[arg(long, default_value_t = 8)]
    restarts: usize,

    /// Simplex iterations per restart.
    #[arg(long, default_value_t = 400)]
    max_iters: usize,

    /// Pin the noise variance instead of optimizing it.
    #[arg(long)]
    fix_noise: Option<f64>,

    /// Standard deviation of additive Gaussian label noise.
    #[arg(long)]
    noise_sd: Option<f64>,

    /// Subtract the target mean before fitting; predictions add it back.
    #[arg(long)]
    center_targets: bool,

    /// Upper kernel-width bound for the mCvMD pipeline.
    #[arg(long, default_value_t = distgp::distances::DEFAULT_B_MAX)]
    bmax: f64,

    /// Wasserstein order for the Wasserstein pipeline.
    #[arg(long, default_value_t = distgp::distances::DEFAULT_P)]
    p: f64,

    /// Directory for report.json, timings.json and the per-pipeline grid
    /// CSVs.
    #[arg(long, short, default_value = ".")]
    out_dir: PathBuf,
}

/// A failed run, split by who is at fault: the command line or the
/// computation.
enum Failure {
    Usage(String),
    Command(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Command(e) => match e {
                Error::Domain(_)
                | Error::Quadrature(_)
                | Error::NotPositiveDefinite(_)
                | Error::NegativeVariance(_)
                | Error::Optimization(_) => 3,
                _ => 2,
            },
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Command(e)
    }
}

/// Marks an error as the user's flag choice rather than a computation
/// failure.
fn usage<T>(r: distgp::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version surface as errors; keep them on exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .expect("the global thread pool is built once, before any use");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Command(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData(args) => gen_data(args, cli.seed),
        Command::Distances(args) => distances(args),
        Command::Train(args) => train(args, cli.seed),
        Command::Predict(args) => predict(args),
        Command::Benchmark(args) => benchmark(args, cli.seed),
    }
}

fn gen_data(args: GenDataArgs, seed: u64) -> Result<(), Failure> {
    let target = usage(TargetFunction::from_tag(&args.target))?;
    let cfg = BenchmarkConfig {
        n_train: args.n_train,
        samples_per_input: args.samples,
        target,
        seed,
        target_noise_sd: args.noise_sd,
        ..BenchmarkConfig::default()
    };
    usage(cfg.validate())?;
    let set = generate_training_set(&cfg)?;
    let dataset = DatasetFile::new(seed, target, &set);
    write_json_file(&args.output, &dataset)?;
    println!(
        "wrote {} inputs ({} Dirac points each, target {}) to {}",
        dataset.len(),
        args.samples,
        target,
        args.output.display()
    );
    Ok(())
}

fn distances(args: DistancesArgs) -> Result<(), Failure> {
    let family = usage(DistanceFamily::from_tag(&args.distance))?;
    let selection = usage(InputSelection::from_tag(&args.inputs))?;
    let spec = DistanceSpec::new(family)
        .with_b_max(args.bmax)
        .with_p(args.p)
        .with_quadrature(QuadratureConfig::with_nodes(args.quad_nodes));
    usage(spec.validate())?;

    let dataset: DatasetFile = read_json_file(&args.data)?;
    dataset.validate()?;
    let inputs = selection.pick(&dataset);
    let dm = distance_matrix(&inputs, &spec)?;
    write_distance_csv(&args.output, &dm)?;
    println!(
        "wrote {}x{} {} matrix over {} inputs to {}",
        dm.n(),
        dm.n(),
        family,
        selection.tag(),
        args.output.display()
    );
    Ok(())
}

/// Builds the kernel family from the flag set, rejecting shape flags that do
/// not belong to the chosen family.
fn kernel_family(args: &TrainArgs) -> distgp::Result<KernelFamily> {
    let family = match args.kernel.as_str() {
        "se" | "squared_exponential" => KernelFamily::SquaredExponential,
        "exponential" => KernelFamily::Exponential,
        "matern" => KernelFamily::Matern {
            nu: MaternNu::try_from(args.matern_nu.ok_or_else(|| {
                Error::Parameter("the matern kernel needs --matern-nu".into())
            })?)?,
        },
        "gamma_exponential" => KernelFamily::GammaExponential {
            gamma: args.gamma.ok_or_else(|| {
                Error::Parameter("the gamma_exponential kernel needs --gamma".into())
            })?,
        },
        "rational_quadratic" => KernelFamily::RationalQuadratic {
            shape: args.rq_alpha.unwrap_or(1.0),
        },
        other => {
            return Err(Error::Parameter(format!("unknown kernel family '{other}'")));
        }
    };
    let stray = [
        (args.matern_nu.is_some(), matches!(family, KernelFamily::Matern { .. }), "--matern-nu"),
        (
            args.gamma.is_some(),
            matches!(family, KernelFamily::GammaExponential { .. }),
            "--gamma",
        ),
        (
            args.rq_alpha.is_some(),
            matches!(family, KernelFamily::RationalQuadratic { .. }),
            "--rq-alpha",
        ),
    ];
    for (present, active, flag) in stray {
        if present && !active {
            return Err(Error::Parameter(format!(
                "{flag} does not apply to the {} kernel",
                args.kernel
            )));
        }
    }
    Ok(family)
}

fn train(args: TrainArgs, seed: u64) -> Result<(), Failure> {
    let family = usage(kernel_family(&args))?;
    let selection = usage(InputSelection::from_tag(&args.inputs))?;
    let optimize = OptimizeConfig {
        restarts: args.restarts,
        max_iters: args.max_iters,
        seed: seed + TRAIN_OPT_SEED_OFFSET,
        fix_noise: args.fix_noise,
        ..OptimizeConfig::default()
    };
    usage(optimize.validate())?;
    if let Some(nodes) = args.quad_nodes {
        usage(QuadratureConfig::with_nodes(nodes).validate())?;
    }

    let dataset: DatasetFile = read_json_file(&args.data)?;
    dataset.validate()?;
    let mut dm = read_distance_csv(&args.matrix)?;
    if dm.n() != dataset.len() {
        return Err(Error::Inconsistent(format!(
            "dataset {} has {} inputs but matrix {} is {}x{}",
            args.data.display(),
            dataset.len(),
            args.matrix.display(),
            dm.n(),
            dm.n()
        ))
        .into());
    }
    if let Some(nodes) = args.quad_nodes {
        let spec = dm
            .spec()
            .clone()
            .with_quadrature(QuadratureConfig::with_nodes(nodes));
        dm = DistanceMatrix::from_parts(spec, dm.values().clone())?;
    }
    let inputs = selection.pick(&dataset);

    let offset = if args.center_targets {
        mean(&dataset.targets)
    } else {
        0.0
    };
    let fit_targets = DVector::from_iterator(
        dataset.targets.len(),
        dataset.targets.iter().map(|t| t - offset),
    );

    let best = optimize_hyperparameters(&fit_targets, &dm, family, &optimize)?;
    let gp = TrainedGP::fit(&inputs, &fit_targets, &dm, &best.kernel, best.noise_var)?;
    save_model(&args.output, &gp, offset)?;
    println!(
        "fitted {} over {} distances: amplitude {:.6}, lengthscale {:.6}, noise {:.3e}, \
         log marginal likelihood {:.4} (restart {}), jitter {:.1e}; wrote {}",
        best.kernel.family,
        dm.spec().family,
        best.kernel.amplitude,
        best.kernel.lengthscale,
        best.noise_var,
        best.log_marginal,
        best.restart_index,
        gp.jitter_used(),
        args.output.display()
    );
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn predict(args: PredictArgs) -> Result<(), Failure> {
    let (gp, offset) = load_model(&args.model)?;
    let inputs = read_inputs_json(&args.inputs)?;
    let mut predictions = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let r = gp
            .predict_dist(input)
            .map_err(|e| e.with_context(&format!("input {i}")))?;
        predictions.push(PredictionResult {
            mean: r.mean + offset,
            variance: r.variance,
        });
    }
    write_predictions_csv(&args.output, &predictions)?;
    println!(
        "wrote {} predictions to {}",
        predictions.len(),
        args.output.display()
    );
    Ok(())
}

fn benchmark(args: BenchmarkArgs, seed: u64) -> Result<(), Failure> {
    let target = usage(TargetFunction::from_tag(&args.target))?;
    let cfg = BenchmarkConfig {
        n_train: args.n_train,
        samples_per_input: args.samples,
        target,
        grid: GridSpec {
            mu_nodes: args.grid,
            var_nodes: args.grid,
            ..GridSpec::default()
        },
        seed,
        target_noise_sd: args.noise_sd,
        center_targets: args.center_targets,
        mcvmd_b_max: args.bmax,
        wasserstein_p: args.p,
        optimize: OptimizeConfig {
            restarts: args.restarts,
            max_iters: args.max_iters,
            fix_noise: args.fix_noise,
            ..OptimizeConfig::default()
        },
        ..BenchmarkConfig::default()
    };
    usage(cfg.validate())?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        Error::from(e).with_context(&format!("creating {}", args.out_dir.display()))
    })?;
    let run = run_benchmark(&cfg)?;

    write_json_file(&args.out_dir.join("report.json"), &run.report)?;
    write_json_file(&args.out_dir.join("timings.json"), &run.timings)?;
    let mut successes = 0usize;
    for (result, grid) in run.report.pipelines.iter().zip(&run.grids) {
        match (&result.outcome, grid) {
            (PipelineOutcome::Success(stats), Some(grid)) => {
                successes += 1;
                write_grid_csv(&args.out_dir.join(format!("{}_grid.csv", result.name)), grid)?;
                println!(
                    "{}: interior RMSE {:.6}, full RMSE {:.6} (amplitude {:.4}, lengthscale {:.4}, noise {:.3e})",
                    result.name,
                    stats.interior_rmse,
                    stats.full_rmse,
                    stats.amplitude,
                    stats.lengthscale,
                    stats.noise_var
                );
            }
            (PipelineOutcome::Failure { error }, _) => {
                println!("{}: FAILED: {error}", result.name);
            }
            (PipelineOutcome::Success(_), None) => unreachable!("successes carry grids"),
        }
    }
    println!("wrote report.json and timings.json to {}", args.out_dir.display());
    if successes == 0 {
        return Err(Error::Optimization("every pipeline failed; see report.json".into()).into());
    }
    Ok(())
}
