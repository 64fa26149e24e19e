use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{BoundingBox, SimOptions};
use crate::ilqr::SolverOptions;
use crate::models::{Benchmark, HopperParams, ModelKind, ModelParams, QuadrupedParams, TaskSpec, WeightTrial};

/// Optional replacements for the model's default task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskOverrides {
    pub duration: Option<f64>,
    pub steps: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub x_goal: Option<Vec<f64>>,
}

/// Experiment description, read from TOML. Field names are the file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub task: TaskOverrides,
    /// Empty means the model's default weight settings.
    #[serde(default)]
    pub weight_trials: Vec<WeightTrial>,
    /// Variances `σ²`; perturbations are drawn from `N(0, σ² I)`.
    #[serde(default = "default_covariances")]
    pub covariances: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials_per_covariance: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_thresholds")]
    pub failure_thresholds: Vec<f64>,
    /// Divergence box for perturbed rollouts; a model default when absent.
    #[serde(default)]
    pub bounding_box: Option<BoundingBox>,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Model parameter overrides (`[params]` table).
    #[serde(default)]
    pub params: Option<serde_json::Value>,
}

fn default_covariances() -> Vec<f64> {
    vec![1e-4]
}

fn default_trials() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

pub(crate) fn default_thresholds() -> Vec<f64> {
    vec![50.0, 10.0, 5.0]
}

/// The covariance magnitudes of the robustness sweep.
pub const SWEEP_COVARIANCES: [f64; 6] = [1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2];

impl ExperimentConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            task: TaskOverrides::default(),
            weight_trials: Vec::new(),
            covariances: default_covariances(),
            trials_per_covariance: default_trials(),
            seed: 0,
            output_dir: default_output_dir(),
            failure_thresholds: default_thresholds(),
            bounding_box: None,
            solver: SolverOptions::default(),
            params: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if let Some(c) = self.covariances.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return bad(format!("covariance {c} must be positive"));
        }
        if self.failure_thresholds.is_empty() {
            return bad("at least one failure threshold is required".into());
        }
        if self.failure_thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("failure thresholds must be positive".into());
        }
        if self.failure_thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return bad(format!("failure thresholds {:?} must be strictly descending", self.failure_thresholds));
        }
        for (k, w) in self.weight_trials.iter().enumerate() {
            let values = [w.q_chi, w.q_n, w.q_stage, w.r_air, w.r_stance];
            if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("weight trial {} has a negative or non-finite weight", k + 1));
            }
            if w.r_air <= 0.0 || w.r_stance <= 0.0 {
                return bad(format!("weight trial {} needs positive input weights", k + 1));
            }
        }
        if let Some(d) = self.task.duration {
            if !(d > 0.0) {
                return bad(format!("task duration {d} must be positive"));
            }
        }
        if self.task.steps == Some(0) {
            return bad("task steps must be positive".into());
        }
        if self.solver.max_iterations == 0 {
            return bad("solver.max_iterations must be positive".into());
        }
        self.benchmark().map(|_| ())
    }

    /// Model with the configured parameter overrides.
    pub fn benchmark(&self) -> Result<Benchmark> {
        let params = self.params.clone().unwrap_or(serde_json::Value::Object(Default::default()));
        let parsed = match self.model {
            ModelKind::Hopper => serde_json::from_value::<HopperParams>(params).map(ModelParams::Hopper),
            ModelKind::Quadruped => serde_json::from_value::<QuadrupedParams>(params).map(ModelParams::Quadruped),
        };
        parsed
            .map(Benchmark::new)
            .map_err(|e| Error::Config(format!("params: {e}")))
    }

    pub fn trials(&self, bench: &Benchmark) -> Vec<WeightTrial> {
        if self.weight_trials.is_empty() {
            bench.default_trials()
        } else {
            self.weight_trials.clone()
        }
    }

    pub fn task(&self, bench: &Benchmark, trial: &WeightTrial) -> Result<TaskSpec> {
        let mut task = bench.task(trial);
        let n = bench.system.state_dim();
        let vector = |v: &Vec<f64>, what: &str| {
            if v.len() != n {
                return Err(Error::Config(format!("task.{what} has {} entries, expected {n}", v.len())));
            }
            Ok(DVector::from_column_slice(v))
        };
        if let Some(x0) = &self.task.x0 {
            task.x0 = vector(x0, "x0")?;
        }
        if let Some(goal) = &self.task.x_goal {
            task.x_goal = vector(goal, "x_goal")?;
        }
        if let Some(d) = self.task.duration {
            task.duration = d;
        }
        if let Some(steps) = self.task.steps {
            task.steps = steps;
        }
        Ok(task)
    }

    /// Simulation options for solves (no bounding box).
    pub fn solve_options(&self) -> SimOptions {
        SimOptions::default()
    }

    /// Simulation options for perturbed rollouts.
    pub fn rollout_options(&self, bench: &Benchmark, task: &TaskSpec) -> Result<SimOptions> {
        let bounds = match &self.bounding_box {
            Some(b) => b.clone(),
            None => default_bounds(bench.kind(), &task.x0),
        };
        let n = bench.system.state_dim();
        if bounds.lower.len() != n || bounds.upper.len() != n {
            return Err(Error::Config(format!("bounding_box must have {n} entries per bound")));
        }
        if bounds.lower.iter().zip(&bounds.upper).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("bounding_box lower bounds must be below upper bounds".into()));
        }
        Ok(SimOptions {
            bounds: Some(bounds),
            ..SimOptions::default()
        })
    }
}

/// Generous physical limits: bodies stay above the ground and within a few
/// meters of the start, rates stay bounded.
pub fn default_bounds(kind: ModelKind, x0: &DVector<f64>) -> BoundingBox {
    let radius: Vec<f64> = match kind {
        ModelKind::Hopper => vec![5.0, 5.0, 1.4, 50.0, 50.0, 200.0],
        ModelKind::Quadruped => {
            let mut r = vec![2.0, 2.0, 1.5, 3.0, 3.0, 3.0, 3.0];
            r.extend([20.0, 20.0, 50.0, 1e3, 1e3, 1e3, 1e3]);
            r
        }
    };
    let mut b = BoundingBox::around(x0, &radius);
    b.lower[1] = b.lower[1].max(0.02);
    if kind == ModelKind::Hopper {
        b.lower[2] = -1.4;
        b.upper[2] = 1.4;
    }
    b
}
