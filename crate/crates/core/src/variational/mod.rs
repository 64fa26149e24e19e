//! Linearization along hybrid trajectories: step Jacobians, saltation
//! matrices, the fundamental solution matrix and the convergence measure
//! with its gradients.

mod bfgs;
mod fundamental;
mod gradient;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hybrid::integrate::integrate_adaptive;
use crate::hybrid::simulate::{augment, augmented_rhs, split_augmented};
use crate::hybrid::{
    propagate_step, HybridMode, HybridSystem, HybridTrajectory, ModeId, SegmentJacobian,
    SimOptions, StepPropagation, Tolerances, Transition,
};

pub use bfgs::bfgs_update;
pub use fundamental::{convergence_measure, fundamental_solution, FundamentalSolution, SINGULAR_GAP};
pub use gradient::{
    chi_gradient, chi_input_gradient, chi_state_gradient, factor_derivative_tensors,
    step_derivative, ChiGradient, FactorDerivative, StepDerivative, FD_STEP,
};

/// Minimum magnitude of the guard rate along the flow at an event.
pub const TRANSVERSALITY_TOLERANCE: f64 = 1e-8;

/// State and input Jacobians `(A, B)` of the flow of a single mode over
/// `[t, t + h]`, obtained from the variational equations.
pub fn discrete_jacobians(
    mode: &HybridMode,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    tol: Tolerances,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = mode.state_dim;
    let m = mode.input_dim;
    if x.len() != n || u.len() != m {
        return Err(Error::Dimension(format!(
            "state {} / input {} vs mode ({n}, {m})",
            x.len(),
            u.len()
        )));
    }
    let mut rhs = augmented_rhs(mode, u);
    let z = integrate_adaptive(&mut rhs, t, &augment(x, m), t + h, n, tol, mode)?;
    let (a, b) = split_augmented(&z, n, m);
    check_finite(&a, 0, 0)?;
    check_finite(&b, 0, n)?;
    Ok((a, b))
}

fn check_finite(mat: &DMatrix<f64>, step: usize, offset: usize) -> Result<()> {
    for (j, col) in mat.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDifference {
                step,
                coordinate: offset + j,
            });
        }
    }
    Ok(())
}

/// First-order map of perturbations across one event. `xi_u` carries the
/// sensitivity to the input through an input-dependent guard (zero when
/// the guard does not depend on `u`).
#[derive(Clone, Debug, PartialEq)]
pub struct Saltation {
    pub from: ModeId,
    pub to: ModeId,
    pub time: f64,
    pub xi: DMatrix<f64>,
    pub xi_u: DMatrix<f64>,
}

/// Saltation matrix of `transition` at the event `(t_e, x_pre)`.
///
/// `Ξ = D_xR + (f_post - D_xR f_pre - D_tR) D_xg / (D_tg + D_xg f_pre)`.
pub fn saltation(
    transition: &Transition,
    f_pre: &DVector<f64>,
    f_post: &DVector<f64>,
    x_pre: &DVector<f64>,
    t_e: f64,
    u: &DVector<f64>,
) -> Result<Saltation> {
    let g = transition.guard_derivatives(t_e, x_pre, u);
    let rate = g.dt + g.dx.dot(f_pre);
    if !(rate.abs() > TRANSVERSALITY_TOLERANCE) {
        return Err(Error::Grazing {
            from: transition.from,
            to: transition.to,
            rate,
        });
    }
    let (dr, dr_dt) = transition.reset_jacobian(t_e, x_pre);
    let jump = f_post - &dr * f_pre - dr_dt;
    let xi = dr + &jump * g.dx.transpose() / rate;
    let xi_u = &jump * g.du.transpose() / rate;
    if xi.iter().chain(xi_u.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteReset {
            from: transition.from,
            to: transition.to,
        });
    }
    Ok(Saltation {
        from: transition.from,
        to: transition.to,
        time: t_e,
        xi,
        xi_u,
    })
}

/// Linearization of one knot step: the smooth segments between events and
/// the saltation of each event, plus the composed open-loop Jacobians.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLinearization {
    pub segments: Vec<SegmentJacobian>,
    pub saltations: Vec<Saltation>,
    /// Full-step `dx_{i+1}/dx_i`.
    pub a: DMatrix<f64>,
    /// Full-step `dx_{i+1}/du_i`.
    pub b: DMatrix<f64>,
}

/// One factor of an event-containing step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepFactor {
    /// Smooth segment with the step's gain applied to its input block: `A_j - B_j K`.
    Flow { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Event map, including the input column through input-dependent guards.
    Saltation { xi: DMatrix<f64>, xi_u: DMatrix<f64> },
}

impl StepLinearization {
    pub fn event_count(&self) -> usize {
        self.saltations.len()
    }

    /// Sequence of transitions crossed in this step.
    pub fn event_keys(&self) -> Vec<(ModeId, ModeId)> {
        self.saltations.iter().map(|s| (s.from, s.to)).collect()
    }

    /// Closed-loop step matrix `A - B K` for the feedback `u = -K dx_i`
    /// held over the whole step.
    pub fn closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * gain
    }

    /// Factors of the step in composition order (latest first). Segments
    /// of zero duration are omitted. Use [`compose_factors`] to multiply
    /// them back together under zero-order-hold feedback.
    pub fn factorization(&self) -> Vec<StepFactor> {
        let mut out = Vec::new();
        for (j, seg) in self.segments.iter().enumerate().rev() {
            if seg.t_end > seg.t_start || self.segments.len() == 1 {
                out.push(StepFactor::Flow {
                    a: seg.a.clone(),
                    b: seg.b.clone(),
                });
            }
            if j > 0 {
                let s = &self.saltations[j - 1];
                out.push(StepFactor::Saltation {
                    xi: s.xi.clone(),
                    xi_u: s.xi_u.clone(),
                });
            }
        }
        out
    }
}

/// Composes factors (latest first) into the closed-loop step matrix. The
/// input is `-K dx_i` over the whole step, so each factor maps the pair
/// `(dx, du)` with `du` fixed.
pub fn compose_factors(factors: &[StepFactor], gain: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gain.ncols();
    let mut g = DMatrix::<f64>::identity(n, n);
    for factor in factors.iter().rev() {
        g = match factor {
            StepFactor::Flow { a, b } => a * &g - b * gain,
            StepFactor::Saltation { xi, xi_u } => xi * &g - xi_u * gain,
        };
    }
    g
}

fn compose_open_loop(segments: &[SegmentJacobian], saltations: &[Saltation]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = segments[0].a.clone();
    let mut b = segments[0].b.clone();
    for (seg, s) in segments[1..].iter().zip(saltations) {
        a = &seg.a * (&s.xi * a);
        b = &seg.a * (&s.xi * b + &s.xi_u) + &seg.b;
    }
    (a, b)
}

/// Advances one knot step and linearizes it, including saltation matrices
/// for every event crossed.
#[allow(clippy::too_many_arguments)]
pub fn linearize_step(
    system: &HybridSystem,
    mode: ModeId,
    step: usize,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t1: f64,
    opts: &SimOptions,
) -> Result<(StepPropagation, StepLinearization)> {
    let prop = propagate_step(system, mode, step, t0, x0, u, t1, opts, true)?;
    let mut saltations = Vec::with_capacity(prop.events.len());
    for ev in &prop.events {
        let tr = system.transition(ev.from, ev.to)?;
        let f_pre = system.mode(ev.from)?.field(ev.time, &ev.pre_state, u);
        let f_post = system.mode(ev.to)?.field(ev.time, &ev.post_state, u);
        saltations.push(saltation(tr, &f_pre, &f_post, &ev.pre_state, ev.time, u)?);
    }
    let (a, b) = compose_open_loop(&prop.segments, &saltations);
    check_finite(&a, step, 0)?;
    check_finite(&b, step, x0.len())?;
    let lin = StepLinearization {
        segments: prop.segments.clone(),
        saltations,
        a,
        b,
    };
    Ok((prop, lin))
}

/// Linearizes every step of `traj` about its knots and inputs.
pub fn linearize_trajectory(
    system: &HybridSystem,
    traj: &HybridTrajectory,
    opts: &SimOptions,
) -> Result<Vec<StepLinearization>> {
    (0..traj.steps())
        .map(|i| {
            linearize_step(
                system,
                traj.modes[i],
                i,
                traj.times[i],
                &traj.states[i],
                &traj.inputs[i],
                traj.times[i + 1],
                opts,
            )
            .map(|(_, lin)| lin)
        })
        .collect()
}

/// Closed-loop matrices `A_i - B_i K_i` for a gain schedule.
pub fn closed_loop_matrices(steps: &[StepLinearization], gains: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if steps.len() != gains.len() {
        return Err(Error::Dimension(format!(
            "{} step linearizations vs {} gains",
            steps.len(),
            gains.len()
        )));
    }
    Ok(steps.iter().zip(gains).map(|(s, k)| s.closed_loop(k)).collect())
}

#[cfg(test)]
mod tests;
