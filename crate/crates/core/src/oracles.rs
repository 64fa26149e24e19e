//! Independent numerical checks of the linearization and the solver. Used by
//! `chi-ilqr selftest` and by the acceptance tests.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hybrid::{propagate_step, simulate, HybridMode, HybridSystem, HybridTrajectory, ModeId, SimOptions};
use crate::ilqr::{solve, tracking_backward_pass, CostWeights, Problem, SolveArtifacts, SolverMode, SolverOptions};
use crate::models::{Benchmark, ModelKind};
use crate::variational::{
    chi_gradient, closed_loop_matrices, convergence_measure, factor_derivative_tensors, fundamental_solution,
    linearize_step, linearize_trajectory,
};

/// Result of one check, with the measured quantity in `detail`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl OracleOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Central-difference step for χ and flow-map differences.
pub const FD_EPS: f64 = 1e-6;

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// Per-step relative error between the chained χ gradient and central
/// differences of χ, with the tracking gains of `artifacts` held fixed.
pub fn chi_gradient_errors(problem: &Problem, traj: &HybridTrajectory, gains: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let n = problem.system.state_dim();
    let m = problem.system.input_dim();
    let lins = linearize_trajectory(&problem.system, traj, &problem.sim)?;
    let ms = closed_loop_matrices(&lins, gains)?;
    let fs = fundamental_solution(n, &ms)?;
    let chi_with = |i: usize, x: &DVector<f64>, u: &DVector<f64>| -> Result<f64> {
        let (_, lin) = linearize_step(&problem.system, traj.modes[i], i, traj.times[i], x, u, traj.times[i + 1], &problem.sim)?;
        if lin.event_count() != lins[i].event_count() {
            return Err(Error::ModeSequenceFragile { step: i, coordinate: 0 });
        }
        let mut ms = ms.clone();
        ms[i] = lin.closed_loop(&gains[i]);
        Ok(convergence_measure(&fundamental_solution(n, &ms)?.phi))
    };
    let mut errors = Vec::with_capacity(traj.steps());
    for i in 0..traj.steps() {
        let (x, u) = (&traj.states[i], &traj.inputs[i]);
        let tensors = factor_derivative_tensors(
            &problem.system,
            traj.modes[i],
            i,
            traj.times[i],
            x,
            u,
            traj.times[i + 1],
            &problem.sim,
            &lins[i],
        )?;
        let g = chi_gradient(&fs, i, &lins[i], &gains[i], &tensors).stacked();
        let mut fd = DVector::zeros(n + m);
        for k in 0..n + m {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            let (plus, minus) = if k < n {
                let h = FD_EPS * x[k].abs().max(1.0);
                xp[k] += h;
                xm[k] -= h;
                (chi_with(i, &xp, u), chi_with(i, &xm, u).map(|c| (c, h)))
            } else {
                let h = FD_EPS * u[k - n].abs().max(1.0);
                up[k - n] += h;
                um[k - n] -= h;
                (chi_with(i, x, &up), chi_with(i, x, &um).map(|c| (c, h)))
            };
            let (minus, h) = minus?;
            fd[k] = (plus? - minus) / (2.0 * h);
        }
        // Floor keeps steps where χ is locally flat from dominating.
        errors.push(relative((&g - &fd).norm(), fd.norm().max(1e-6 * fs.chi)));
    }
    Ok(errors)
}

/// Largest relative error between each saltation matrix of a step and the
/// one recovered from differences of the flow map across the step:
/// `Ξ_fd = A_post⁻¹ (∂φ/∂x) A_pre⁻¹` for a step with a single event.
pub fn saltation_error(
    system: &HybridSystem,
    mode: ModeId,
    t0: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    t1: f64,
    opts: &SimOptions,
) -> Result<f64> {
    let (prop, lin) = linearize_step(system, mode, 0, t0, x, u, t1, opts)?;
    if prop.events.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "saltation check needs one event in the step, found {}",
            prop.events.len()
        )));
    }
    let n = x.len();
    let keys: Vec<_> = prop.events.iter().map(|e| (e.from, e.to)).collect();
    let flow = |x: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        let p = propagate_step(system, mode, 0, t0, x, u, t1, opts, false)?;
        let same = p.events.iter().map(|e| (e.from, e.to)).eq(keys.iter().copied());
        Ok(same.then_some(p.state))
    };
    let mut jac = DMatrix::zeros(n, n);
    let mut used = Vec::new();
    for k in 0..n {
        let h = FD_EPS * x[k].abs().max(1.0);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[k] += h;
        xm[k] -= h;
        // Only directions that keep the mode sequence are compared.
        if let (Some(p), Some(q)) = (flow(&xp)?, flow(&xm)?) {
            jac.set_column(k, &((p - q) / (2.0 * h)));
            used.push(k);
        }
    }
    let (pre, post) = (&lin.segments[0].a, &lin.segments[1].a);
    let (Some(pre_inv), Some(post_inv)) = (pre.clone().try_inverse(), post.clone().try_inverse()) else {
        return Err(Error::InvalidArgument("singular segment Jacobian".into()));
    };
    // Ξ A_pre e_k = A_post⁻¹ J e_k for every usable direction.
    let xi = &lin.saltations[0].xi;
    let mut worst: f64 = 0.0;
    for &k in &used {
        let lhs = xi * pre.column(k);
        let rhs = &post_inv * jac.column(k);
        worst = worst.max(relative((&lhs - &rhs).norm(), rhs.norm()));
    }
    if used.len() == n {
        let recovered = &post_inv * &jac * &pre_inv;
        worst = worst.max(relative((xi - &recovered).norm(), xi.norm()));
    }
    Ok(worst)
}

/// Saltation check at the first event of a benchmark's initial-guess
/// rollout: hopper touchdown or quadruped front-foot touchdown.
pub fn benchmark_saltation_error(kind: ModelKind) -> Result<f64> {
    let bench = Benchmark::default_for(kind);
    let trial = &bench.default_trials()[0];
    let task = bench.task(trial);
    let problem = task.problem(bench.system.clone(), SimOptions::default());
    let u = bench.initial_inputs(&task, &problem.sim)?;
    let traj = crate::ilqr::rollout(&problem, &u)?;
    let ev = traj
        .events
        .first()
        .ok_or_else(|| Error::InvalidArgument("initial guess has no events".into()))?;
    let i = ev.step;
    saltation_error(
        &problem.system,
        traj.modes[i],
        traj.times[i],
        &traj.states[i],
        &traj.inputs[i],
        traj.times[i + 1],
        &problem.sim,
    )
}

/// Event-free double integrator with a quadratic cost.
pub fn lqr_problem() -> Problem {
    let mode = HybridMode::new(ModeId(1), 2, 1, |_, x, u| dvector![x[1], u[0]])
        .with_jacobian(|_, _, _| (dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]));
    Problem {
        system: HybridSystem::new(vec![mode], vec![]).expect("single mode system"),
        x0: dvector![1.0, -0.5],
        mode0: ModeId(1),
        t0: 0.0,
        tf: 1.0,
        steps: 20,
        weights: CostWeights {
            q: DMatrix::identity(2, 2) * 0.1,
            r: dmatrix![0.05],
            r_by_mode: vec![],
            q_n: DMatrix::identity(2, 2) * 10.0,
            q_chi: 0.0,
            x_goal: dvector![0.0, 0.0],
            x_ref: None,
        },
        sim: SimOptions::default(),
    }
}

/// Discrete Riccati gains and cost-to-go matrix at the first knot for
/// the zero-order-hold double integrator of [`lqr_problem`].
pub fn riccati_reference(problem: &Problem) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let h = (problem.tf - problem.t0) / problem.steps as f64;
    let a = dmatrix![1.0, h; 0.0, 1.0];
    let b = dmatrix![0.5 * h * h; h];
    let w = &problem.weights;
    let mut p = w.q_n.clone();
    let mut gains = vec![DMatrix::zeros(1, 2); problem.steps];
    for i in (0..problem.steps).rev() {
        let s = &w.r + b.transpose() * &p * &b;
        let k = s.try_inverse().expect("positive definite") * b.transpose() * &p * &a;
        p = &w.q + a.transpose() * &p * (&a - &b * &k);
        gains[i] = k;
    }
    (gains, p)
}

/// Relative gain error, relative cost error and accepted iterations of a
/// vanilla solve of [`lqr_problem`] against the Riccati reference.
pub fn lqr_errors() -> Result<(f64, f64, usize)> {
    let problem = lqr_problem();
    let out = solve(&problem, &vec![dvector![0.0]; problem.steps], SolverMode::Vanilla, &SolverOptions::default())?;
    let (gains, p0) = riccati_reference(&problem);
    let gain_err = out
        .tracking_gains
        .feedback
        .iter()
        .zip(&gains)
        .map(|(k, r)| relative((k - r).norm(), r.norm()))
        .fold(0.0, f64::max);
    let j_ref = problem.x0.dot(&(&p0 * &problem.x0));
    let accepted = out.iterations.iter().filter(|l| l.alpha.is_some()).count();
    Ok((gain_err, relative((out.cost - j_ref).abs(), j_ref), accepted))
}

/// Error ratio of a closed-loop rollout started `eps` along the worst-case
/// direction `v_χ`, and the measure χ it should reproduce.
pub fn linear_regime(problem: &Problem, artifacts: &SolveArtifacts, eps: f64) -> Result<(f64, f64)> {
    let traj = &artifacts.trajectory;
    let tr = tracking_backward_pass(problem, traj)?;
    let gains = tr.gains();
    let dx0 = &tr.fs.v * eps;
    let x0 = &traj.states[0] + &dx0;
    let run = simulate(
        &problem.system,
        &x0,
        traj.modes[0],
        |i, x| &traj.inputs[i] - &gains[i] * (x - &traj.states[i]),
        problem.t0,
        problem.tf,
        problem.steps,
        &problem.sim,
    )?;
    if run.mode_sequence() != traj.mode_sequence() {
        return Err(Error::ModeSequenceFragile { step: 0, coordinate: 0 });
    }
    let dxf = run.final_state() - traj.final_state();
    Ok((dxf.norm() / dx0.norm(), tr.fs.chi))
}

/// Hopper problem and a vanilla solve for weight setting `trial` (0-based).
pub fn hopper_solve(trial: usize, mode: SolverMode, opts: &SolverOptions) -> Result<(Problem, SolveArtifacts)> {
    let bench = Benchmark::default_for(ModelKind::Hopper);
    let weights = bench
        .default_trials()
        .get(trial)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument(format!("no weight trial {trial}")))?;
    let task = bench.task(&weights);
    let problem = task.problem(bench.system.clone(), SimOptions::default());
    let u = bench.initial_inputs(&task, &problem.sim)?;
    let out = solve(&problem, &u, mode, opts)?;
    Ok((problem, out))
}

/// `Φ = P_i M_i O_i` at every step and `χ`, `J_χ` recomputed from stored
/// artifacts. Returns the largest relative discrepancy.
pub fn structural_error(problem: &Problem, artifacts: &SolveArtifacts) -> Result<f64> {
    let n = problem.system.state_dim();
    let lins = linearize_trajectory(&problem.system, &artifacts.trajectory, &problem.sim)?;
    let ms = closed_loop_matrices(&lins, &artifacts.tracking_gains.feedback)?;
    let fs = fundamental_solution(n, &ms)?;
    let mut worst = relative((fs.chi - artifacts.chi).abs(), artifacts.chi);
    let j = crate::ilqr::total_cost(&artifacts.trajectory, &problem.weights);
    let q_chi = match artifacts.mode {
        SolverMode::Vanilla => 0.0,
        SolverMode::Convergent => problem.weights.q_chi,
    };
    worst = worst.max(relative((q_chi * fs.chi + j - artifacts.j_chi).abs(), artifacts.j_chi.abs()));
    for (i, m) in ms.iter().enumerate() {
        let assembled = &fs.suffix[i] * m * &fs.prefix[i];
        worst = worst.max(relative((&assembled - &fs.phi).norm(), fs.phi.norm()));
    }
    worst = worst.max(relative((&fs.phi * &fs.v - &fs.u * fs.chi).norm(), fs.chi));
    Ok(worst)
}

fn outcome(name: &str, result: Result<(bool, String)>) -> OracleOutcome {
    match result {
        Ok((passed, detail)) => OracleOutcome::new(name, passed, detail),
        Err(e) => OracleOutcome::new(name, false, format!("error: {e}")),
    }
}

/// The quick checks run by `chi-ilqr selftest`.
pub fn run_selftest() -> Vec<OracleOutcome> {
    let mut out = Vec::new();
    out.push(outcome(
        "lqr",
        lqr_errors().map(|(g, c, it)| (g < 1e-8 && c < 1e-8 && it <= 2, format!("gain {g:.2e}, cost {c:.2e}, {it} iterations"))),
    ));
    for kind in [ModelKind::Hopper, ModelKind::Quadruped] {
        out.push(outcome(
            &format!("saltation-{kind}"),
            benchmark_saltation_error(kind).map(|e| (e < 1e-3, format!("relative error {e:.2e}"))),
        ));
    }
    let solved = hopper_solve(1, SolverMode::Vanilla, &SolverOptions::default());
    out.push(outcome(
        "chi-gradient",
        solved.as_ref().map_err(Clone::clone).and_then(|(p, a)| {
            let errs = chi_gradient_errors(p, &a.trajectory, &a.tracking_gains.feedback)?;
            let good = errs.iter().filter(|e| **e < 1e-4).count() as f64 / errs.len() as f64;
            let worst = errs.iter().copied().fold(0.0, f64::max);
            Ok((good >= 0.95 && worst < 1e-2, format!("{:.1}% below 1e-4, max {worst:.2e}", 100.0 * good)))
        }),
    ));
    out.push(outcome(
        "linear-regime",
        solved.as_ref().map_err(Clone::clone).and_then(|(p, a)| {
            let (e, chi) = linear_regime(p, a, 1e-6)?;
            Ok(((e / chi - 1.0).abs() < 0.1, format!("E {e:.6}, chi {chi:.6}")))
        }),
    ));
    out.push(outcome(
        "structure",
        solved.as_ref().map_err(Clone::clone).and_then(|(p, a)| {
            let e = structural_error(p, a)?;
            Ok((e < 1e-9, format!("relative discrepancy {e:.2e}")))
        }),
    ));
    out
}
