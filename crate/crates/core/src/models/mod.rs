//! Benchmark models and their tasks.

pub mod hopper;
pub mod quadruped;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{HybridSystem, ModeId, SimOptions};
use crate::ilqr::{CostWeights, Problem};

pub use hopper::{hopper_initial_inputs, hopper_system, hopper_task, HopperParams};
pub use quadruped::{
    quadruped_initial_inputs, quadruped_system, quadruped_task, quadruped_weights, PdGuess, QuadrupedParams,
};

/// One weight setting: `Q_χ`, terminal `Q_N = q_n I`, stage `Q = q_stage I`
/// and per-domain input weights `R = r I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTrial {
    pub q_chi: f64,
    pub q_n: f64,
    #[serde(default)]
    pub q_stage: f64,
    pub r_air: f64,
    pub r_stance: f64,
}

impl WeightTrial {
    /// Builds cost weights. Modes listed in `per_mode` get their own input
    /// weight; all others use `r_air`.
    pub fn to_weights(&self, n: usize, m: usize, per_mode: &[(ModeId, f64)]) -> CostWeights {
        let eye_m = DMatrix::<f64>::identity(m, m);
        CostWeights {
            q: DMatrix::identity(n, n) * self.q_stage,
            r: &eye_m * self.r_air,
            r_by_mode: per_mode.iter().map(|(id, r)| (*id, &eye_m * *r)).collect(),
            q_n: DMatrix::identity(n, n) * self.q_n,
            q_chi: self.q_chi,
            x_goal: DVector::zeros(n),
            x_ref: None,
        }
    }
}

/// The four hopper weight settings benchmarked against each other.
pub fn hopper_weight_trials() -> Vec<WeightTrial> {
    [(50.0, 500.0, 0.01, 0.1), (50.0, 800.0, 0.005, 0.01), (50.0, 250.0, 0.02, 0.05), (75.0, 500.0, 0.01, 0.01)]
        .into_iter()
        .map(|(q_chi, q_n, r_air, r_stance)| WeightTrial {
            q_chi,
            q_n,
            q_stage: 0.0,
            r_air,
            r_stance,
        })
        .collect()
}

/// Initial condition, goal, horizon and weights of a trajectory task.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub x0: DVector<f64>,
    pub x_goal: DVector<f64>,
    pub mode0: ModeId,
    pub duration: f64,
    pub steps: usize,
    pub weights: CostWeights,
}

impl TaskSpec {
    pub fn problem(&self, system: HybridSystem, sim: SimOptions) -> Problem {
        let mut weights = self.weights.clone();
        weights.x_goal = self.x_goal.clone();
        Problem {
            system,
            x0: self.x0.clone(),
            mode0: self.mode0,
            t0: 0.0,
            tf: self.duration,
            steps: self.steps,
            weights,
            sim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hopper,
    Quadruped,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hopper => "hopper",
            ModelKind::Quadruped => "quadruped",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hopper" => Ok(ModelKind::Hopper),
            "quadruped" => Ok(ModelKind::Quadruped),
            other => Err(Error::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

/// Model parameters, tagged by model.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Hopper(HopperParams),
    Quadruped(QuadrupedParams),
}

/// A model instance ready to build problems and initial guesses.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub params: ModelParams,
    pub system: HybridSystem,
}

impl Benchmark {
    pub fn new(params: ModelParams) -> Self {
        let system = match &params {
            ModelParams::Hopper(p) => hopper_system(p),
            ModelParams::Quadruped(p) => quadruped_system(p),
        };
        Self { params, system }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        Self::new(match kind {
            ModelKind::Hopper => ModelParams::Hopper(HopperParams::default()),
            ModelKind::Quadruped => ModelParams::Quadruped(QuadrupedParams::default()),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Hopper(_) => ModelKind::Hopper,
            ModelParams::Quadruped(_) => ModelKind::Quadruped,
        }
    }

    pub fn task(&self, trial: &WeightTrial) -> TaskSpec {
        match self.params {
            ModelParams::Hopper(_) => hopper_task(trial),
            ModelParams::Quadruped(_) => quadruped_task(trial),
        }
    }

    /// Weight settings used when none are configured.
    pub fn default_trials(&self) -> Vec<WeightTrial> {
        match self.params {
            ModelParams::Hopper(_) => hopper_weight_trials(),
            ModelParams::Quadruped(_) => vec![quadruped_weights()],
        }
    }

    pub fn initial_inputs(&self, task: &TaskSpec, sim: &SimOptions) -> Result<Vec<DVector<f64>>> {
        match &self.params {
            ModelParams::Hopper(p) => Ok(hopper_initial_inputs(p, task)),
            ModelParams::Quadruped(p) => quadruped_initial_inputs(p, task, &PdGuess::default(), sim),
        }
    }
}

#[cfg(test)]
mod tests;
