//! Hybrid iLQR. The vanilla mode minimizes the quadratic cost `J`; the
//! convergent mode minimizes `J_χ = Q_χ χ + J`, where `χ` is the spectral
//! norm of the closed-loop fundamental solution matrix under the LQR
//! tracking gains of the current trajectory.

mod backward;
mod solve;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{HybridSystem, HybridTrajectory, ModeId, SimOptions};

pub use backward::{backward_pass, BackwardResult, ChiExpansion};
pub use solve::{
    compute_o, forward_pass, line_search_accept, rollout, solve, tracking_backward_pass, IterationLog,
    SolveArtifacts, SolverMode, SolverOptions, TrackingResult,
};

/// Quadratic cost weights. Stage input weights may differ per mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Stage state weight `Q_i`.
    pub q: DMatrix<f64>,
    /// Input weight used in modes without an entry in `r_by_mode`.
    pub r: DMatrix<f64>,
    pub r_by_mode: Vec<(ModeId, DMatrix<f64>)>,
    /// Terminal weight `Q_N`.
    pub q_n: DMatrix<f64>,
    /// Weight of the convergence measure in `J_χ`.
    pub q_chi: f64,
    pub x_goal: DVector<f64>,
    /// Optional stage reference; deviations from zero when absent.
    pub x_ref: Option<Vec<DVector<f64>>>,
}

impl CostWeights {
    pub fn r_for(&self, mode: ModeId) -> &DMatrix<f64> {
        self.r_by_mode
            .iter()
            .find(|(id, _)| *id == mode)
            .map_or(&self.r, |(_, r)| r)
    }

    fn stage_ref(&self, i: usize) -> Option<&DVector<f64>> {
        self.x_ref.as_ref().map(|r| &r[i])
    }

    pub fn validate(&self, n: usize, m: usize, steps: usize) -> Result<()> {
        let square = |mat: &DMatrix<f64>, dim: usize, what: &str| {
            if mat.shape() != (dim, dim) {
                return Err(Error::Dimension(format!("{what} is {:?}, expected {dim}x{dim}", mat.shape())));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{what} has non-finite entries")));
            }
            Ok(())
        };
        square(&self.q, n, "Q")?;
        square(&self.q_n, n, "Q_N")?;
        square(&self.r, m, "R")?;
        for (id, r) in &self.r_by_mode {
            square(r, m, &format!("R[{id}]"))?;
        }
        if self.x_goal.len() != n {
            return Err(Error::Dimension(format!("goal has {} entries, expected {n}", self.x_goal.len())));
        }
        if let Some(r) = &self.x_ref {
            if r.len() != steps || r.iter().any(|x| x.len() != n) {
                return Err(Error::Dimension("stage reference does not match horizon".into()));
            }
        }
        if !(self.q_chi >= 0.0) {
            return Err(Error::InvalidArgument(format!("Q_chi = {} must be non-negative", self.q_chi)));
        }
        Ok(())
    }
}

/// Feedforward and feedback terms of the policy `δu_i = k_i - K_i δx_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub feedforward: Vec<DVector<f64>>,
    pub feedback: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn len(&self) -> usize {
        self.feedback.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feedback.is_empty()
    }

    /// Feedback-only schedule (zero feedforward).
    pub fn feedback_only(feedback: Vec<DMatrix<f64>>) -> Self {
        let feedforward = feedback.iter().map(|k| DVector::zeros(k.nrows())).collect();
        Self { feedforward, feedback }
    }
}

/// A trajectory optimization problem on a uniform knot grid.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: HybridSystem,
    pub x0: DVector<f64>,
    pub mode0: ModeId,
    pub t0: f64,
    pub tf: f64,
    pub steps: usize,
    pub weights: CostWeights,
    pub sim: SimOptions,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        let n = self.system.state_dim();
        let m = self.system.input_dim();
        if self.x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", self.x0.len())));
        }
        if !(self.tf > self.t0) || self.steps == 0 {
            return Err(Error::InvalidArgument("horizon must have positive length and steps".into()));
        }
        self.weights.validate(n, m, self.steps)
    }
}

/// Quadratic cost
/// `J = (x_N - x_goal)ᵀ Q_N (x_N - x_goal) + Σ (x_i - x_ref,i)ᵀ Q (x_i - x_ref,i) + u_iᵀ R_{mode(i)} u_i`.
pub fn total_cost(traj: &HybridTrajectory, w: &CostWeights) -> f64 {
    let mut j = 0.0;
    for i in 0..traj.steps() {
        let x = &traj.states[i];
        let dx = match w.stage_ref(i) {
            Some(r) => x - r,
            None => x.clone(),
        };
        let u = &traj.inputs[i];
        j += dx.dot(&(&w.q * &dx)) + u.dot(&(w.r_for(traj.modes[i]) * u));
    }
    let dx = traj.final_state() - &w.x_goal;
    j + dx.dot(&(&w.q_n * &dx))
}
