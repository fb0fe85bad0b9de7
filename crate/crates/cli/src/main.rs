mod matrix_io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stiep::experiments::{self, ConfigOverrides, ExperimentSpec, Family};
use stiep::kernel::{self, Matrix};
use stiep::manifold::{RetractionMode, TransportMode};
use stiep::model::{ModelKind, Problem};
use stiep::solver::{init_point, solve, InitStepMode, SolverConfig, Status};
use stiep::spectra::{greedy_distance, sample_disk_spectrum, sample_stochastic, spectrum_of_matrix, Spectrum};

/// Row sums must match 1 to this tolerance for a matrix to count as stochastic.
const ROW_SUM_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(name = "stiep", version, about = "Stochastic matrices with a prescribed spectrum")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a stochastic matrix with the spectrum in a JSON file.
    Solve(SolveArgs),
    /// Sample a spectrum (from a random stochastic matrix or the disk) and write it as JSON.
    Gen(GenArgs),
    /// Run a seeded experiment sweep and write CSV files.
    Bench(BenchArgs),
    /// Compare a matrix against a spectrum and validate stochasticity.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "I")]
    One,
    #[value(name = "II")]
    Two,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::One => ModelKind::Isospectral,
            ModelArg::Two => ModelKind::Sl2Extended,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RetractionArg {
    Qr,
    Exp,
}

impl From<RetractionArg> for RetractionMode {
    fn from(r: RetractionArg) -> Self {
        match r {
            RetractionArg::Qr => RetractionMode::QrNormalize,
            RetractionArg::Exp => RetractionMode::Exponential,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Proj,
    Parallel,
}

impl From<TransportArg> for TransportMode {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Proj => TransportMode::Projection,
            TransportArg::Parallel => TransportMode::Parallel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitStepArg {
    Newton,
    Gn,
}

impl From<InitStepArg> for InitStepMode {
    fn from(i: InitStepArg) -> Self {
        match i {
            InitStepArg::Newton => InitStepMode::NewtonApprox,
            InitStepArg::Gn => InitStepMode::GaussNewton,
        }
    }
}

/// Solver knobs shared by `solve` and `bench`.
#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum)]
    retraction: Option<RetractionArg>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long, value_enum)]
    init_step: Option<InitStepArg>,
    /// Disable step growth after a first-trial acceptance.
    #[arg(long)]
    no_additional_step: bool,
    /// Residual tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            retraction: self.retraction.map(Into::into),
            transport: self.transport.map(Into::into),
            init_step: self.init_step.map(Into::into),
            additional_step: self.no_additional_step.then_some(false),
            max_iter: self.max_iter,
            residual_tol: self.tol,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Spectrum JSON: {"real": [...], "pairs": [[re, im], ...]}.
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long, value_enum, default_value = "II")]
    model: ModelArg,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-iteration trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Run summary JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Recovered matrix, one row per line.
    #[arg(long)]
    matrix_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenMode {
    /// Eigenvalues of a random stochastic matrix.
    Stochastic,
    /// Perron root, `t` pairs and `n - 2t - 1` reals from a small disk.
    Disk,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    /// Number of conjugate pairs (disk mode).
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, value_enum, default_value = "stochastic")]
    mode: GenMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the sampled matrix (stochastic mode).
    #[arg(long)]
    matrix_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Scaling,
    FixedN,
    TStats,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_enum)]
    family: FamilyArg,
    /// Comma-separated matrix sizes.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Comma-separated pair counts (fixed-n).
    #[arg(long, value_delimiter = ',', default_value = "3,6,9")]
    t_values: Vec<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated models.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "I,II")]
    models: Vec<ModelArg>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Include wall-clock times in rows.csv (makes the file run-dependent).
    #[arg(long)]
    with_time: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    spectrum: PathBuf,
    /// Largest acceptable eigenvalue distance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

enum Failure {
    /// Unreadable or invalid input: exit code 2.
    Input(String),
    /// The computation ran but did not reach its goal: exit code 3.
    Numeric(String),
}

type CmdResult = Result<(), Failure>;

fn input<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Input(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_spectrum(path: &Path) -> Result<Spectrum, Failure> {
    Spectrum::read_json(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn eig_distance(a: &Matrix, spectrum: &Spectrum) -> Option<f64> {
    let eig = kernel::eigenvalues(a).ok()?;
    greedy_distance(&eig, &spectrum.full()).ok()
}

fn cmd_solve(args: SolveArgs) -> CmdResult {
    let spectrum = read_spectrum(&args.spectrum)?;
    let kind: ModelKind = args.model.into();
    let config = args.solver.overrides().apply(SolverConfig::for_model(kind));
    config.validate().map_err(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x0 = init_point(&spectrum, &mut rng).map_err(input)?;
    let problem = Problem::new(spectrum.clone(), kind);
    let outcome = solve(&problem, x0, &config).map_err(|e| Failure::Numeric(e.to_string()))?;

    let distance = eig_distance(&outcome.matrix, &spectrum);
    let summary = outcome.summary(distance);
    if let Some(path) = &args.trace {
        write_file(path, &outcome.trace.to_csv())?;
    }
    if let Some(path) = &args.summary {
        let json = serde_json::to_string_pretty(&summary).map_err(input)?;
        write_file(path, &(json + "\n"))?;
    }
    if let Some(path) = &args.matrix_out {
        matrix_io::write_matrix(path, &outcome.matrix).map_err(Failure::Input)?;
    }
    println!(
        "status {} after {} iterations, residual {:e}, eigenvalue distance {}, {:.3} s",
        summary.status.as_str(),
        summary.iterations,
        summary.final_residual,
        distance.map_or("n/a".to_string(), |d| format!("{d:e}")),
        summary.wall_time_s,
    );
    match summary.status {
        Status::ResidualMet => Ok(()),
        other => Err(Failure::Numeric(format!("solver stopped with status {}", other.as_str()))),
    }
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let spectrum = match args.mode {
        GenMode::Stochastic => {
            if args.t.is_some() {
                return Err(Failure::Input("--t only applies to --mode disk".into()));
            }
            if args.n == 0 {
                return Err(Failure::Input("--n must be positive".into()));
            }
            let a = sample_stochastic(args.n, &mut rng);
            if let Some(path) = &args.matrix_out {
                matrix_io::write_matrix(path, &a).map_err(Failure::Input)?;
            }
            spectrum_of_matrix(&a).map_err(|e| Failure::Numeric(e.to_string()))?
        }
        GenMode::Disk => {
            if args.matrix_out.is_some() {
                return Err(Failure::Input("--matrix-out only applies to --mode stochastic".into()));
            }
            let t = args.t.ok_or_else(|| Failure::Input("--mode disk needs --t".into()))?;
            sample_disk_spectrum(args.n, t, &mut rng).map_err(input)?
        }
    };
    spectrum.write_json(&args.output).map_err(|e| Failure::Input(format!("{}: {e}", args.output.display())))?;
    println!("wrote n = {}, t = {} to {}", spectrum.n(), spectrum.t(), args.output.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let (family, default_sizes, default_samples) = match args.family {
        FamilyArg::Scaling => (Family::Scaling, vec![50, 100, 200], 10),
        FamilyArg::FixedN => (Family::FixedN, vec![20], 20),
        FamilyArg::TStats => (Family::TStatistics, vec![10, 20, 50, 100], 2000),
    };
    let mut spec = ExperimentSpec::new(
        family,
        args.sizes.unwrap_or(default_sizes),
        args.samples.unwrap_or(default_samples),
        args.seed,
    );
    spec.t_values = args.t_values;
    spec.models = args.models.iter().map(|&m| m.into()).collect();
    spec.overrides = args.solver.overrides();
    spec.validate().map_err(input)?;
    fs::create_dir_all(&args.output).map_err(|e| Failure::Input(format!("{}: {e}", args.output.display())))?;
    let out = |name: &str| args.output.join(name);

    if family == Family::TStatistics {
        let (counts, stats) = experiments::run_t_statistics(&spec).map_err(input)?;
        write_file(&out("counts.csv"), &experiments::t_counts_to_csv(&counts))?;
        write_file(&out("stats.csv"), &experiments::t_stats_to_csv(&stats))?;
        write_file(&out("histogram.csv"), &experiments::t_histogram_to_csv(&stats))?;
        for s in &stats {
            println!(
                "n = {}: mean t = {:.3} (t/n = {:.3}) over {} samples",
                s.n,
                s.mean_t,
                s.mean_t / s.n as f64,
                s.samples
            );
        }
        return Ok(());
    }

    let rows = match family {
        Family::Scaling => experiments::run_scaling(&spec),
        _ => experiments::run_fixed_n(&spec),
    }
    .map_err(|e| Failure::Numeric(e.to_string()))?;
    let summaries = experiments::summarize(&rows);
    write_file(&out("rows.csv"), &experiments::rows_to_csv(&rows, args.with_time))?;
    write_file(&out("summary.csv"), &experiments::summaries_to_csv(&summaries))?;
    for s in &summaries {
        match (s.t, s.mean_min_eig_distance) {
            (Some(t), Some(d)) => println!(
                "model {} n = {} t = {t}: mean min distance {d:.2e}, mean iterations {:.1}",
                s.model.label(),
                s.n,
                s.mean_iterations
            ),
            _ => println!(
                "model {} n = {}: {}/{} solved, mean iterations {:.1} (stderr {:.1})",
                s.model.label(),
                s.n,
                s.successes,
                s.samples,
                s.mean_iterations,
                s.stderr_iterations
            ),
        }
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> CmdResult {
    let a = matrix_io::read_matrix(&args.matrix).map_err(Failure::Input)?;
    let spectrum = read_spectrum(&args.spectrum)?;
    if a.nrows() != spectrum.n() {
        return Err(Failure::Input(format!(
            "matrix is {0}x{0} but the spectrum has {1} values",
            a.nrows(),
            spectrum.n()
        )));
    }
    let distance =
        eig_distance(&a, &spectrum).ok_or_else(|| Failure::Numeric("eigenvalue computation failed".into()))?;
    let row_dev = a.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let min_entry = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let stochastic = min_entry >= 0.0 && row_dev <= ROW_SUM_TOL;
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    println!("eigenvalue distance: {distance:e}");
    println!("max row-sum deviation: {row_dev:e}");
    println!("min entry: {min_entry:e}");
    println!("nonnegative: {}", yes_no(min_entry >= 0.0));
    println!("stochastic: {}", yes_no(stochastic));
    if !stochastic {
        return Err(Failure::Numeric("matrix is not stochastic".into()));
    }
    if distance.is_nan() || distance > args.tol {
        return Err(Failure::Numeric(format!("eigenvalue distance exceeds {:e}", args.tol)));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Check(a) => cmd_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
