use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::backward::{backward_pass, BackwardResult, ChiExpansion, REG_FACTOR, REG_MIN};
use super::{total_cost, GainSchedule, Problem};
use crate::error::{Error, Result};
use crate::hybrid::{simulate, HybridTrajectory, ModeId};
use crate::variational::{
    bfgs_update, chi_gradient, closed_loop_matrices, factor_derivative_tensors, fundamental_solution,
    linearize_trajectory, FundamentalSolution, StepLinearization,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMode {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "chi")]
    Convergent,
}

impl SolverMode {
    pub fn label(self) -> &'static str {
        match self {
            SolverMode::Vanilla => "vanilla",
            SolverMode::Convergent => "chi",
        }
    }
}

impl std::str::FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(SolverMode::Vanilla),
            "chi" | "convergent" => Ok(SolverMode::Convergent),
            other => Err(Error::InvalidArgument(format!("unknown solver mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Armijo constant of the line search.
    pub armijo: f64,
    /// Smallest step scale tried before the line search gives up.
    pub min_step: f64,
    /// Relative change of `J_χ` regarded as stalled.
    pub stall_tolerance: f64,
    /// Consecutive stalled iterations before stopping.
    pub stall_iterations: usize,
    /// Rescale the identity BFGS seed by `yᵀy / sᵀy` before its first update.
    pub bfgs_scaling: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            armijo: 1e-4,
            min_step: 1.0 / 64.0,
            stall_tolerance: 1e-6,
            stall_iterations: 3,
            bfgs_scaling: false,
        }
    }
}

/// One entry of the solver log. Iteration 0 describes the initial rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: f64,
    pub j_chi: f64,
    pub chi: f64,
    /// Accepted step scale, `None` when no step was accepted.
    pub alpha: Option<f64>,
    pub regularization: f64,
    pub expected_decrease: f64,
    pub mode_sequence_changed: bool,
    pub note: Option<String>,
}

/// Output of a solve: the nominal trajectory with its LQR tracking gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveArtifacts {
    pub mode: SolverMode,
    pub trajectory: HybridTrajectory,
    pub tracking_gains: GainSchedule,
    pub cost: f64,
    pub j_chi: f64,
    pub chi: f64,
    /// Weight of χ in `j_chi` (zero for vanilla solves).
    pub q_chi: f64,
    pub iterations: Vec<IterationLog>,
    pub termination: String,
}

/// Linearization, tracking gains and convergence data of one trajectory.
#[derive(Clone, Debug)]
pub struct TrackingResult {
    pub lins: Vec<StepLinearization>,
    pub backward: BackwardResult,
    pub fs: FundamentalSolution,
    pub cost: f64,
}

impl TrackingResult {
    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.backward.gains.feedback
    }

    pub fn j_chi(&self, q_chi: f64) -> f64 {
        q_chi * self.fs.chi + self.cost
    }
}

/// Open-loop simulation of the input sequence `inputs`.
pub fn rollout(problem: &Problem, inputs: &[DVector<f64>]) -> Result<HybridTrajectory> {
    if inputs.len() != problem.steps {
        return Err(Error::Dimension(format!(
            "{} inputs for {} steps",
            inputs.len(),
            problem.steps
        )));
    }
    simulate(
        &problem.system,
        &problem.x0,
        problem.mode0,
        |i, _| inputs[i].clone(),
        problem.t0,
        problem.tf,
        problem.steps,
        &problem.sim,
    )
}

/// Closed-loop rollout `u_i = ū_i + α k_i - K_i (x_i - x̄_i)` about `prev`.
pub fn forward_pass(
    problem: &Problem,
    prev: &HybridTrajectory,
    gains: &GainSchedule,
    alpha: f64,
) -> Result<HybridTrajectory> {
    simulate(
        &problem.system,
        &problem.x0,
        problem.mode0,
        |i, x| &prev.inputs[i] + &gains.feedforward[i] * alpha - &gains.feedback[i] * (x - &prev.states[i]),
        problem.t0,
        problem.tf,
        problem.steps,
        &problem.sim,
    )
}

/// Linearizes `traj`, runs the Riccati pass on `J` for the tracking gains
/// `K_t` and assembles `Φ` under those gains.
pub fn tracking_backward_pass(problem: &Problem, traj: &HybridTrajectory) -> Result<TrackingResult> {
    let lins = linearize_trajectory(&problem.system, traj, &problem.sim)?;
    let backward = backward_pass(traj, &lins, &problem.weights, None, 0.0)?;
    let ms = closed_loop_matrices(&lins, &backward.gains.feedback)?;
    let fs = fundamental_solution(problem.system.state_dim(), &ms)?;
    Ok(TrackingResult {
        lins,
        backward,
        fs,
        cost: total_cost(traj, &problem.weights),
    })
}

/// Prefix products `O_i = M_{i-1} ⋯ M_0` (with `O_0 = I`) of the closed-loop
/// step matrices under `gains`.
pub fn compute_o(lins: &[StepLinearization], gains: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let ms = closed_loop_matrices(lins, gains)?;
    let n = lins.first().map_or(0, |l| l.a.nrows());
    let mut out = Vec::with_capacity(ms.len());
    let mut acc = DMatrix::identity(n, n);
    for m in &ms {
        out.push(acc.clone());
        acc = m * acc;
    }
    Ok(out)
}

/// Armijo test `J_new <= J_old - c α d` for the predicted decrease `d`.
pub fn line_search_accept(j_new: f64, j_old: f64, alpha: f64, expected_decrease: f64, c: f64) -> bool {
    j_new.is_finite() && j_new <= j_old - c * alpha * expected_decrease
}

/// Stacked `(x_0, u_0, …, x_{N-1}, u_{N-1})`.
fn stack(traj: &HybridTrajectory) -> DVector<f64> {
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut z = DVector::zeros(traj.steps() * (n + m));
    for i in 0..traj.steps() {
        z.rows_mut(i * (n + m), n).copy_from(&traj.states[i]);
        z.rows_mut(i * (n + m) + n, m).copy_from(&traj.inputs[i]);
    }
    z
}

/// Stacked gradient of χ with respect to every `(x_i, u_i)`, gains held at `K_t`.
fn chi_gradients(problem: &Problem, traj: &HybridTrajectory, tr: &TrackingResult) -> DVector<f64> {
    let n = problem.system.state_dim();
    let m = problem.system.input_dim();
    let mut out = DVector::zeros(traj.steps() * (n + m));
    for i in 0..traj.steps() {
        let tensors = match factor_derivative_tensors(
            &problem.system,
            traj.modes[i],
            i,
            traj.times[i],
            &traj.states[i],
            &traj.inputs[i],
            traj.times[i + 1],
            &problem.sim,
            &tr.lins[i],
        ) {
            Ok(t) => t,
            Err(err) => {
                log::warn!("{err}; dropping the χ gradient of step {i}");
                continue;
            }
        };
        let g = chi_gradient(&tr.fs, i, &tr.lins[i], &tr.gains()[i], &tensors);
        out.rows_mut(i * (n + m), n + m).copy_from(&g.stacked());
    }
    out
}

struct ChiModel {
    z: DVector<f64>,
    gradient: DVector<f64>,
    hessian: DMatrix<f64>,
    sequence: Vec<ModeId>,
    fresh: bool,
}

impl ChiModel {
    fn new(traj: &HybridTrajectory, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            z: stack(traj),
            gradient,
            hessian: DMatrix::identity(d, d),
            sequence: traj.mode_sequence(),
            fresh: true,
        }
    }

    fn update(&mut self, traj: &HybridTrajectory, gradient: DVector<f64>, scaling: bool) {
        let z = stack(traj);
        let s = &z - &self.z;
        let y = &gradient - &self.gradient;
        if self.fresh && scaling {
            let sy = s.dot(&y);
            if sy > 0.0 {
                self.hessian *= y.norm_squared() / sy;
            }
        }
        let before = self.hessian.clone();
        self.hessian = bfgs_update(&self.hessian, &s, &y);
        if self.hessian != before {
            self.fresh = false;
        }
        self.z = z;
        self.gradient = gradient;
    }

    fn expansion(&self, q_chi: f64, steps: usize, width: usize) -> ChiExpansion {
        ChiExpansion {
            gradient: (0..steps)
                .map(|i| self.gradient.rows(i * width, width) * q_chi)
                .collect(),
            hessian: (0..steps)
                .map(|i| self.hessian.view((i * width, i * width), (width, width)) * q_chi)
                .collect(),
        }
    }
}

fn log_entry(
    iteration: usize,
    tr: &TrackingResult,
    q_chi: f64,
    alpha: Option<f64>,
    regularization: f64,
    expected_decrease: f64,
    mode_sequence_changed: bool,
    note: Option<String>,
) -> IterationLog {
    IterationLog {
        iteration,
        cost: tr.cost,
        j_chi: tr.j_chi(q_chi),
        chi: tr.fs.chi,
        alpha,
        regularization,
        expected_decrease,
        mode_sequence_changed,
        note,
    }
}

/// Runs the solver from the initial input sequence `u_init`.
///
/// Each iteration computes a search direction from the backward pass on the
/// active cost (with the χ gradient and the block-diagonal BFGS χ Hessian in
/// convergent mode), then halves the step scale from 1 until the Armijo
/// condition on `J_χ` holds. `J_χ` of every candidate is evaluated with the
/// tracking gains recomputed on that candidate.
pub fn solve(
    problem: &Problem,
    u_init: &[DVector<f64>],
    mode: SolverMode,
    opts: &SolverOptions,
) -> Result<SolveArtifacts> {
    problem.validate()?;
    let n = problem.system.state_dim();
    let m = problem.system.input_dim();
    let q_chi = match mode {
        SolverMode::Vanilla => 0.0,
        SolverMode::Convergent => problem.weights.q_chi,
    };
    let use_chi = q_chi > 0.0;

    let mut traj = rollout(problem, u_init)?;
    let mut tr = tracking_backward_pass(problem, &traj)?;
    let mut log = vec![log_entry(0, &tr, q_chi, None, 0.0, 0.0, false, None)];
    let mut model = if use_chi {
        Some(ChiModel::new(&traj, chi_gradients(problem, &traj, &tr)))
    } else {
        None
    };

    let mut rho = 0.0;
    let mut exhausted = 0;
    let mut stalled = 0;
    let mut termination = format!("iteration limit ({})", opts.max_iterations);

    for iteration in 1..=opts.max_iterations {
        let j_old = tr.j_chi(q_chi);
        let expansion = model.as_ref().map(|c| c.expansion(q_chi, problem.steps, n + m));
        let search = match backward_pass(&traj, &tr.lins, &problem.weights, expansion.as_ref(), rho) {
            Ok(s) => s,
            Err(err) => {
                log.push(log_entry(iteration, &tr, q_chi, None, rho, 0.0, false, Some(err.to_string())));
                termination = format!("backward pass failed: {err}");
                break;
            }
        };
        rho = search.regularization;
        let expected = search.expected_decrease;
        if !(expected > 1e-12 * j_old.abs().max(1.0)) {
            log.push(log_entry(iteration, &tr, q_chi, None, rho, expected, false, None));
            termination = "no predicted decrease".into();
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut last_failure = None;
        while alpha >= opts.min_step {
            match forward_pass(problem, &traj, &search.gains, alpha) {
                Ok(candidate) => {
                    let evaluated = if use_chi {
                        tracking_backward_pass(problem, &candidate).map(|t| (t.j_chi(q_chi), Some(t)))
                    } else {
                        Ok((total_cost(&candidate, &problem.weights), None))
                    };
                    match evaluated {
                        Ok((j_new, t)) if line_search_accept(j_new, j_old, alpha, expected, opts.armijo) => {
                            accepted = Some((candidate, t));
                            break;
                        }
                        Ok(_) => {}
                        Err(err) => last_failure = Some(err.to_string()),
                    }
                }
                Err(err) => last_failure = Some(err.to_string()),
            }
            alpha *= 0.5;
        }

        let Some((candidate, evaluated)) = accepted else {
            exhausted += 1;
            log.push(log_entry(iteration, &tr, q_chi, None, rho, expected, false, last_failure));
            // Small ρ barely changes the step when Q_uu is large; jump to its scale.
            rho = (rho * REG_FACTOR).max(search.quu_scale).max(REG_MIN);
            if exhausted >= 2 {
                termination = "line search exhausted twice".into();
                break;
            }
            continue;
        };
        exhausted = 0;
        let new_tr = match evaluated {
            Some(t) => t,
            None => match tracking_backward_pass(problem, &candidate) {
                Ok(t) => t,
                Err(err) => {
                    log.push(log_entry(iteration, &tr, q_chi, None, rho, expected, false, Some(err.to_string())));
                    termination = format!("linearization failed: {err}");
                    break;
                }
            },
        };
        let changed = candidate.mode_sequence() != traj.mode_sequence();
        traj = candidate;
        tr = new_tr;
        if let Some(c) = model.as_mut() {
            let gradient = chi_gradients(problem, &traj, &tr);
            if changed || traj.mode_sequence() != c.sequence {
                *c = ChiModel::new(&traj, gradient);
            } else {
                c.update(&traj, gradient, opts.bfgs_scaling);
            }
        }
        let j_new = tr.j_chi(q_chi);
        log.push(log_entry(iteration, &tr, q_chi, Some(alpha), rho, expected, changed, None));
        rho = if rho / REG_FACTOR < REG_MIN { 0.0 } else { rho / REG_FACTOR };
        if (j_old - j_new).abs() < opts.stall_tolerance * j_new.abs().max(1.0) {
            stalled += 1;
            if stalled >= opts.stall_iterations {
                termination = "converged".into();
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(SolveArtifacts {
        mode,
        tracking_gains: GainSchedule::feedback_only(tr.gains().to_vec()),
        cost: tr.cost,
        j_chi: tr.j_chi(q_chi),
        chi: tr.fs.chi,
        q_chi,
        trajectory: traj,
        iterations: log,
        termination,
    })
}
