//! Paired vanilla / χ-iLQR experiments: solves, Monte-Carlo tracking
//! rollouts, aggregate statistics and report files.

mod config;
mod report;
mod rollout;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hybrid::ModeId;
use crate::ilqr::{solve, IterationLog, SolveArtifacts, SolverMode};
use crate::models::{Benchmark, WeightTrial};

pub use config::{default_bounds, ExperimentConfig, TaskOverrides, SWEEP_COVARIANCES};
pub use report::{
    histogram, read_artifacts, success_curves, success_rates, summarize, trajectory_csv, write_outputs, CellSummary, HistogramBin,
    SuccessCurve, ThresholdRate, FORMAT_VERSION,
};
pub use rollout::{error_ratio, sample_perturbation, trial_record, trial_stream, tracked_rollout, TrialRecord};

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub(crate) mod float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// Label of a solved trajectory: weight trial index (1-based) and mode.
pub fn trajectory_label(weight_trial: usize, mode: SolverMode) -> String {
    format!("w{}-{}", weight_trial + 1, mode.label())
}

/// Outcome of one solve, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub label: String,
    pub weight_trial: usize,
    pub weights: WeightTrial,
    pub mode: SolverMode,
    pub error: Option<String>,
    pub cost: Option<f64>,
    pub j_chi: Option<f64>,
    pub chi: Option<f64>,
    pub termination: Option<String>,
    pub mode_sequence: Vec<ModeId>,
    pub iterations: Vec<IterationLog>,
}

impl SolveSummary {
    fn from_result(label: String, weight_trial: usize, weights: &WeightTrial, mode: SolverMode, r: &Result<SolveArtifacts>) -> Self {
        match r {
            Ok(a) => Self {
                label,
                weight_trial,
                weights: weights.clone(),
                mode,
                error: None,
                cost: Some(a.cost),
                j_chi: Some(a.j_chi),
                chi: Some(a.chi),
                termination: Some(a.termination.clone()),
                mode_sequence: a.trajectory.mode_sequence(),
                iterations: a.iterations.clone(),
            },
            Err(e) => Self {
                label,
                weight_trial,
                weights: weights.clone(),
                mode,
                error: Some(e.to_string()),
                cost: None,
                j_chi: None,
                chi: None,
                termination: None,
                mode_sequence: Vec::new(),
                iterations: Vec::new(),
            },
        }
    }
}

/// A solved trajectory ready for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledArtifacts {
    pub label: String,
    pub weight_trial: usize,
    pub artifacts: SolveArtifacts,
}

/// Everything an experiment produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub solves: Vec<SolveSummary>,
    pub cells: Vec<CellSummary>,
    pub curves: Vec<SuccessCurve>,
    pub trials: Vec<TrialRecord>,
}

/// Solves every configured weight trial in the requested modes. Failures
/// are recorded in the summaries; the remaining solves still run.
pub fn solve_trials(config: &ExperimentConfig, modes: &[SolverMode]) -> Result<(Vec<SolveSummary>, Vec<LabeledArtifacts>)> {
    let bench = config.benchmark()?;
    let mut summaries = Vec::new();
    let mut solved = Vec::new();
    for (k, trial) in config.trials(&bench).iter().enumerate() {
        let task = config.task(&bench, trial)?;
        let problem = task.problem(bench.system.clone(), config.solve_options());
        let u_init = bench.initial_inputs(&task, &problem.sim);
        for &mode in modes {
            let label = trajectory_label(k, mode);
            log::info!("solving {label}");
            let result = u_init.clone().and_then(|u| solve(&problem, &u, mode, &config.solver));
            match &result {
                Ok(a) => log::info!("{label}: J = {:.4}, chi = {:.4}, {}", a.cost, a.chi, a.termination),
                Err(e) => log::warn!("{label}: solve failed: {e}"),
            }
            summaries.push(SolveSummary::from_result(label.clone(), k, trial, mode, &result));
            if let Ok(artifacts) = result {
                solved.push(LabeledArtifacts {
                    label,
                    weight_trial: k,
                    artifacts,
                });
            }
        }
    }
    Ok((summaries, solved))
}

/// Paired Monte-Carlo evaluation: for every covariance and trial id one
/// `δx₀` is drawn and rolled out under every trajectory's tracking gains.
pub fn evaluate(config: &ExperimentConfig, solved: &[LabeledArtifacts]) -> Result<Vec<TrialRecord>> {
    let bench = config.benchmark()?;
    let trials = config.trials(&bench);
    let n = bench.system.state_dim();
    let mut records = Vec::new();
    for (c, &cov) in config.covariances.iter().enumerate() {
        for trial_id in 0..config.trials_per_covariance {
            let dx0 = sample_perturbation(cov, n, config.seed, trial_stream(c, trial_id));
            for entry in solved {
                let weights = trials.get(entry.weight_trial).unwrap_or(&trials[0]);
                let task = config.task(&bench, weights)?;
                let sim = config.rollout_options(&bench, &task)?;
                let paired = solved
                    .iter()
                    .any(|o| o.weight_trial == entry.weight_trial && o.label != entry.label);
                records.push(trial_record(&bench.system, &sim, &entry.artifacts, &entry.label, trial_id, cov, &dx0, paired));
            }
        }
        log::info!("covariance {cov:e}: {} rollouts", config.trials_per_covariance * solved.len());
    }
    Ok(records)
}

/// Full pipeline: vanilla and χ-iLQR solves for every weight trial, paired
/// rollouts, aggregation.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentReport, Vec<LabeledArtifacts>)> {
    config.validate()?;
    let (solves, solved) = solve_trials(config, &[SolverMode::Vanilla, SolverMode::Convergent])?;
    let trials = evaluate(config, &solved)?;
    Ok((assemble_report(config, solves, trials), solved))
}

pub fn assemble_report(config: &ExperimentConfig, solves: Vec<SolveSummary>, trials: Vec<TrialRecord>) -> ExperimentReport {
    let cells = summarize(&trials, &config.failure_thresholds);
    let curves = success_curves(&cells, &config.failure_thresholds);
    ExperimentReport {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        solves,
        cells,
        curves,
        trials,
    }
}

/// Benchmark and initial guess used by the CLI and the FFI for a model.
pub fn initial_guess(bench: &Benchmark, config: &ExperimentConfig, trial: &WeightTrial) -> Result<Vec<DVector<f64>>> {
    let task = config.task(bench, trial)?;
    bench.initial_inputs(&task, &config.solve_options())
}
