use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use convergent_ilqr::bench::{
    assemble_report, evaluate, read_artifacts, run_experiment, solve_trials, write_outputs, ExperimentConfig, SolveSummary,
};
use convergent_ilqr::ilqr::SolverMode;
use convergent_ilqr::models::ModelKind;
use convergent_ilqr::oracles::run_selftest;
use convergent_ilqr::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_EVALUATION: u8 = 4;

#[derive(Parser)]
#[command(name = "chi-ilqr", version, about = "Hybrid iLQR with a convergence objective, and its robustness benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Hopper,
    Quadruped,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Hopper => ModelKind::Hopper,
            Model::Quadruped => ModelKind::Quadruped,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vanilla,
    Chi,
}

impl From<Mode> for SolverMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Vanilla => SolverMode::Vanilla,
            Mode::Chi => SolverMode::Convergent,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve every weight trial of a model in one mode.
    Solve {
        #[arg(long, value_enum)]
        model: Model,
        /// Experiment config (TOML); model defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired Monte-Carlo rollouts of previously solved trajectories.
    Evaluate {
        /// Directory written by `solve` (one or more runs).
        #[arg(long)]
        artifacts: PathBuf,
        /// Comma-separated covariance magnitudes.
        #[arg(long, value_delimiter = ',', required = true)]
        cov: Vec<f64>,
        #[arg(long)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vanilla and convergent solves followed by the paired evaluation.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the numerical oracle checks.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, e: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Config problems keep their exit code whatever stage reports them.
fn classify(stage: u8) -> impl Fn(Error) -> Failure {
    move |e| match e {
        Error::Config(_) => Failure::new(EXIT_CONFIG, e),
        other => Failure::new(stage, other),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T, code: u8) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(code, e))?;
    fs::write(path, text).map_err(|e| Failure::new(code, format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Option<Result<T, String>> {
    let text = fs::read_to_string(path).ok()?;
    Some(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display())))
}

fn solve_command(model: ModelKind, config: Option<PathBuf>, mode: SolverMode, out: &Path) -> Result<(), Failure> {
    let config = match config {
        Some(path) => {
            let c = ExperimentConfig::load(&path).map_err(classify(EXIT_CONFIG))?;
            if c.model != model {
                return Err(Failure::new(
                    EXIT_CONFIG,
                    format!("--model {model} does not match config model {}", c.model),
                ));
            }
            c
        }
        None => ExperimentConfig::new(model),
    };
    let (summaries, solved) = solve_trials(&config, &[mode]).map_err(classify(EXIT_SOLVER))?;
    let report = assemble_report(&config, summaries.clone(), Vec::new());
    write_outputs(out, &report, &solved).map_err(classify(EXIT_SOLVER))?;
    let solves_path = out.join(format!("solves_{}.json", mode.label()));
    write_json(&solves_path, &summaries, EXIT_SOLVER)?;
    for s in &summaries {
        match (&s.error, s.chi, s.cost) {
            (None, Some(chi), Some(cost)) => println!("{}: J = {cost:.6}, chi = {chi:.6}", s.label),
            (Some(e), _, _) => println!("{}: failed: {e}", s.label),
            _ => {}
        }
    }
    let failed = summaries.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        return Err(Failure::new(EXIT_SOLVER, format!("{failed} of {} solves failed", summaries.len())));
    }
    Ok(())
}

fn evaluate_command(artifacts: &Path, cov: Vec<f64>, trials: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let mut config: ExperimentConfig = match read_json(&artifacts.join("config.json")) {
        Some(parsed) => parsed.map_err(|e| Failure::new(EXIT_CONFIG, e))?,
        None => {
            return Err(Failure::new(
                EXIT_CONFIG,
                format!("{}: no config.json; run `solve` first", artifacts.display()),
            ))
        }
    };
    config.covariances = cov;
    config.trials_per_covariance = trials;
    config.seed = seed;
    config.validate().map_err(classify(EXIT_CONFIG))?;
    let solved = read_artifacts(artifacts).map_err(classify(EXIT_EVALUATION))?;
    let mut solves: Vec<SolveSummary> = Vec::new();
    for mode in [SolverMode::Vanilla, SolverMode::Convergent] {
        if let Some(parsed) = read_json::<Vec<SolveSummary>>(&artifacts.join(format!("solves_{}.json", mode.label()))) {
            solves.extend(parsed.map_err(|e| Failure::new(EXIT_EVALUATION, e))?);
        }
    }
    let records = evaluate(&config, &solved).map_err(classify(EXIT_EVALUATION))?;
    let report = assemble_report(&config, solves, records);
    write_outputs(out, &report, &solved).map_err(classify(EXIT_EVALUATION))?;
    print_cells(&report.cells);
    Ok(())
}

fn print_cells(cells: &[convergent_ilqr::bench::CellSummary]) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for c in cells {
        println!(
            "{} cov {:e}: mean E {} mean F {} diverged {}/{}",
            c.traj,
            c.cov,
            fmt(c.mean_e),
            fmt(c.mean_f),
            c.diverged,
            c.trials
        );
    }
}

fn sweep_command(config: &Path, out: &Path) -> Result<(), Failure> {
    let config = ExperimentConfig::load(config).map_err(classify(EXIT_CONFIG))?;
    let (report, solved) = run_experiment(&config).map_err(classify(EXIT_EVALUATION))?;
    write_outputs(out, &report, &solved).map_err(classify(EXIT_EVALUATION))?;
    for s in &report.solves {
        match (&s.error, s.chi) {
            (None, Some(chi)) => println!("{}: chi = {chi:.6}", s.label),
            (Some(e), _) => println!("{}: failed: {e}", s.label),
            _ => {}
        }
    }
    print_cells(&report.cells);
    if solved.is_empty() {
        return Err(Failure::new(EXIT_SOLVER, "every solve failed"));
    }
    Ok(())
}

fn selftest_command() -> Result<(), Failure> {
    let outcomes = run_selftest();
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::new(EXIT_EVALUATION, format!("{failed} checks failed")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve {
            model,
            config,
            mode,
            out,
        } => solve_command(model.into(), config, mode.into(), &out),
        Command::Evaluate {
            artifacts,
            cov,
            trials,
            seed,
            out,
        } => evaluate_command(&artifacts, cov, trials, seed, &out),
        Command::Sweep { config, out } => sweep_command(&config, &out),
        Command::Selftest => selftest_command(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
