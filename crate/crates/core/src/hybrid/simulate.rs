use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use super::integrate::{adaptive_step, rk_step, Tolerances};
use super::{integrate_smooth, HybridMode, HybridSystem, ModeId, Transition};
use crate::error::{Error, Result};

/// Guard residual accepted at a located event, in guard units.
pub const EVENT_TOLERANCE: f64 = 1e-10;
pub const MAX_BISECTION_ITERATIONS: usize = 100;

/// Axis-aligned box outside of which a simulation is declared divergent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundingBox {
    /// Symmetric box `|x_k - center_k| <= radius_k`.
    pub fn around(center: &DVector<f64>, radius: &[f64]) -> Self {
        Self {
            lower: center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            upper: center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| v.is_finite() && *v >= *lo && *v <= *hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub tolerances: Tolerances,
    pub max_events_per_step: usize,
    pub bounds: Option<BoundingBox>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            max_events_per_step: 4,
            bounds: None,
        }
    }
}

/// A hybrid event that happened inside knot step `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: usize,
    pub from: ModeId,
    pub to: ModeId,
    pub time: f64,
    pub pre_state: DVector<f64>,
    pub post_state: DVector<f64>,
}

/// Discretized execution on a uniform knot grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub modes: Vec<ModeId>,
    pub events: Vec<EventRecord>,
}

impl HybridTrajectory {
    /// Number of knot steps `N`.
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn step_size(&self) -> f64 {
        match self.times.len() {
            0 | 1 => 0.0,
            k => (self.times[k - 1] - self.times[0]) / (k - 1) as f64,
        }
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one knot")
    }

    pub fn events_in_step(&self, step: usize) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(move |e| e.step == step)
    }

    /// Ordered list of visited domains.
    pub fn mode_sequence(&self) -> Vec<ModeId> {
        let mut seq = Vec::with_capacity(self.events.len() + 1);
        if let Some(first) = self.modes.first() {
            seq.push(*first);
        }
        seq.extend(self.events.iter().map(|e| e.to));
        seq
    }
}

/// State and input Jacobians of the flow over one smooth sub-interval.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentJacobian {
    pub mode: ModeId,
    pub t_start: f64,
    pub t_end: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Result of advancing one knot step.
#[derive(Clone, Debug)]
pub struct StepPropagation {
    pub state: DVector<f64>,
    pub mode: ModeId,
    pub events: Vec<EventRecord>,
    /// One entry per smooth sub-interval (empty unless linearization was requested).
    pub segments: Vec<SegmentJacobian>,
}

pub(crate) fn augmented_rhs<'a>(
    mode: &'a HybridMode,
    u: &'a DVector<f64>,
) -> impl FnMut(f64, &DVector<f64>) -> DVector<f64> + 'a {
    let n = mode.state_dim;
    let m = mode.input_dim;
    move |t, z| {
        let x = z.rows(0, n).into_owned();
        let f = mode.field(t, &x, u);
        let (fx, fu) = mode.jacobians(t, &x, u);
        let data = z.as_slice();
        let y = DMatrixView::from_slice(&data[n..n + n * n], n, n);
        let w = DMatrixView::from_slice(&data[n + n * n..], n, m);
        let dy = &fx * y;
        let dw = &fx * w + fu;
        let mut out = DVector::zeros(z.len());
        out.rows_mut(0, n).copy_from(&f);
        out.rows_mut(n, n * n).copy_from_slice(dy.as_slice());
        out.rows_mut(n + n * n, n * m).copy_from_slice(dw.as_slice());
        out
    }
}

pub(crate) fn augment(x: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = x.len();
    let mut z = DVector::zeros(n + n * n + n * m);
    z.rows_mut(0, n).copy_from(x);
    for k in 0..n {
        z[n + k * n + k] = 1.0;
    }
    z
}

pub(crate) fn split_augmented(z: &DVector<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let data = z.as_slice();
    (
        DMatrix::from_column_slice(n, n, &data[n..n + n * n]),
        DMatrix::from_column_slice(n, m, &data[n + n * n..]),
    )
}

/// Bisection on the guard sign until the bracket collapses to adjacent
/// floating-point times. `probe(t)` returns the state at `t`.
fn bisect_guard<P>(
    transition: &Transition,
    u: &DVector<f64>,
    mut t_lo: f64,
    mut t_hi: f64,
    mut x_hi: DVector<f64>,
    mut probe: P,
) -> Result<(f64, DVector<f64>)>
where
    P: FnMut(f64) -> Result<DVector<f64>>,
{
    let mut g_hi = transition.guard(t_hi, &x_hi, u);
    let mut collapsed = false;
    for _ in 0..MAX_BISECTION_ITERATIONS {
        let mid = t_lo + 0.5 * (t_hi - t_lo);
        if mid <= t_lo || mid >= t_hi {
            collapsed = true;
            break;
        }
        let x_mid = probe(mid)?;
        let g_mid = transition.guard(mid, &x_mid, u);
        if g_mid > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
            x_hi = x_mid;
            g_hi = g_mid;
        }
    }
    // A steep guard can keep |g| above the tolerance even when the crossing
    // time is resolved to adjacent floats; that is as precise as it gets.
    if g_hi.abs() > EVENT_TOLERANCE && !(collapsed && g_hi.is_finite()) {
        return Err(Error::EventTolerance {
            residual: g_hi.abs(),
            iterations: MAX_BISECTION_ITERATIONS,
        });
    }
    Ok((t_hi, x_hi))
}

/// Locates the first zero of `transition`'s guard along the flow of `mode`
/// from `(t_lo, x_lo)` within `[t_lo, t_hi]`. Returns `(t_e, x-)`.
pub fn locate_event(
    mode: &HybridMode,
    transition: &Transition,
    t_lo: f64,
    x_lo: &DVector<f64>,
    u: &DVector<f64>,
    t_hi: f64,
    tol: Tolerances,
) -> Result<(f64, DVector<f64>)> {
    let g_lo = transition.guard(t_lo, x_lo, u);
    if g_lo.abs() <= EVENT_TOLERANCE {
        return Ok((t_lo, x_lo.clone()));
    }
    let x_hi = integrate_smooth(mode, t_lo, x_lo, u, t_hi - t_lo, tol)?;
    let g_hi = transition.guard(t_hi, &x_hi, u);
    if !(g_lo > 0.0 && g_hi <= 0.0) {
        return Err(Error::EventBracket {
            t_lo,
            t_hi,
            g_lo,
            g_hi,
        });
    }
    bisect_guard(transition, u, t_lo, t_hi, x_hi, |t| {
        integrate_smooth(mode, t_lo, x_lo, u, t - t_lo, tol)
    })
}

/// Applies the reset map of `transition` at the event.
pub fn apply_reset(transition: &Transition, t_e: f64, x_pre: &DVector<f64>) -> Result<DVector<f64>> {
    let x_post = transition.reset(t_e, x_pre);
    if x_post.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteReset {
            from: transition.from,
            to: transition.to,
        });
    }
    Ok(x_post)
}

/// Event search on one accepted integrator sub-step `[t_a, t_b]`. The state
/// inside the sub-step is reconstructed with a single Dormand–Prince step
/// from `t_a`, which is consistent with how `x_b` itself was produced.
fn earliest_crossing<'s>(
    system: &'s HybridSystem,
    mode: &HybridMode,
    u: &DVector<f64>,
    t_a: f64,
    x_a: &DVector<f64>,
    t_b: f64,
    x_b: &DVector<f64>,
) -> Result<Option<(&'s Transition, f64, DVector<f64>)>> {
    let mut best: Option<(&Transition, f64, DVector<f64>)> = None;
    for tr in system.outgoing(mode.id) {
        let g_a = tr.guard(t_a, x_a, u);
        let g_b = tr.guard(t_b, x_b, u);
        if !(g_a > -EVENT_TOLERANCE && g_b <= -EVENT_TOLERANCE) {
            continue;
        }
        let (t_e, x_e) = if g_a <= EVENT_TOLERANCE {
            (t_a, x_a.clone())
        } else {
            let mut rhs = |s: f64, y: &DVector<f64>| mode.field(s, y, u);
            bisect_guard(tr, u, t_a, t_b, x_b.clone(), |t| {
                Ok(rk_step(&mut rhs, t_a, x_a, t - t_a).0)
            })?
        };
        if best.as_ref().is_none_or(|(_, t_best, _)| t_e < *t_best) {
            best = Some((tr, t_e, x_e));
        }
    }
    Ok(best)
}

/// Advances one knot step `[t0, t1]` from `(mode, x0)` under the constant
/// input `u`, detecting and applying hybrid events. With `linearize`, the
/// variational equations are integrated alongside and the Jacobians of
/// every smooth sub-interval are returned.
#[allow(clippy::too_many_arguments)]
pub fn propagate_step(
    system: &HybridSystem,
    mode: ModeId,
    step: usize,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t1: f64,
    opts: &SimOptions,
    linearize: bool,
) -> Result<StepPropagation> {
    let n = system.state_dim();
    let m = system.input_dim();
    if x0.len() != n || u.len() != m {
        return Err(Error::Dimension(format!(
            "step {step}: state {} / input {} vs system ({n}, {m})",
            x0.len(),
            u.len()
        )));
    }
    let mut current = system.mode(mode)?;
    let mut t = t0;
    let mut seg_start = t0;
    let mut z = if linearize { augment(x0, m) } else { x0.clone() };
    let mut h = t1 - t0;
    let mut events = Vec::new();
    let mut segments = Vec::new();

    while t < t1 {
        let accepted = if linearize {
            let mut rhs = augmented_rhs(current, u);
            adaptive_step(&mut rhs, t, &z, t1, h, n, opts.tolerances, current)?
        } else {
            let mut rhs = |s: f64, y: &DVector<f64>| current.field(s, y, u);
            adaptive_step(&mut rhs, t, &z, t1, h, n, opts.tolerances, current)?
        };
        let x_a = z.rows(0, n).into_owned();
        let x_b = accepted.y.rows(0, n).into_owned();
        match earliest_crossing(system, current, u, t, &x_a, accepted.t, &x_b)? {
            None => {
                t = accepted.t;
                z = accepted.y;
                h = accepted.h_next;
            }
            Some((tr, t_e, x_pre)) => {
                if linearize {
                    let z_e = if t_e == t {
                        z.clone()
                    } else {
                        let mut rhs = augmented_rhs(current, u);
                        rk_step(&mut rhs, t, &z, t_e - t).0
                    };
                    let (a, b) = split_augmented(&z_e, n, m);
                    segments.push(SegmentJacobian {
                        mode: current.id,
                        t_start: seg_start,
                        t_end: t_e,
                        a,
                        b,
                    });
                }
                let x_post = apply_reset(tr, t_e, &x_pre)?;
                log::trace!("step {step}: {} -> {} at t = {t_e}", tr.from, tr.to);
                events.push(EventRecord {
                    step,
                    from: tr.from,
                    to: tr.to,
                    time: t_e,
                    pre_state: x_pre,
                    post_state: x_post.clone(),
                });
                if events.len() > opts.max_events_per_step {
                    return Err(Error::Zeno {
                        step,
                        limit: opts.max_events_per_step,
                    });
                }
                current = system.mode(tr.to)?;
                t = t_e;
                seg_start = t_e;
                z = if linearize { augment(&x_post, m) } else { x_post };
                h = accepted.h_next.min(t1 - t0);
            }
        }
    }

    if linearize {
        let (a, b) = split_augmented(&z, n, m);
        segments.push(SegmentJacobian {
            mode: current.id,
            t_start: seg_start,
            t_end: t1,
            a,
            b,
        });
    }
    Ok(StepPropagation {
        state: z.rows(0, n).into_owned(),
        mode: current.id,
        events,
        segments,
    })
}

/// Simulates the execution from `(mode0, x0)` over `steps` uniform knot steps
/// on `[t0, tf]` under the feedback policy `controller(i, x_i)`, whose output
/// is held constant over each knot step.
#[allow(clippy::too_many_arguments)]
pub fn simulate<C>(
    system: &HybridSystem,
    x0: &DVector<f64>,
    mode0: ModeId,
    mut controller: C,
    t0: f64,
    tf: f64,
    steps: usize,
    opts: &SimOptions,
) -> Result<HybridTrajectory>
where
    C: FnMut(usize, &DVector<f64>) -> DVector<f64>,
{
    if !(tf > t0) && steps > 0 {
        return Err(Error::InvalidArgument(format!("empty horizon [{t0}, {tf}]")));
    }
    let initial = system.mode(mode0)?;
    if x0.len() != initial.state_dim {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, system expects {}",
            x0.len(),
            initial.state_dim
        )));
    }
    let u_probe = DVector::zeros(initial.input_dim);
    for tr in system.outgoing(mode0) {
        let g = tr.guard(t0, x0, &u_probe);
        if g <= -EVENT_TOLERANCE {
            return Err(Error::InitialDomain {
                mode: mode0,
                from: tr.from,
                to: tr.to,
                value: g,
            });
        }
    }
    if let Some(bounds) = &opts.bounds {
        if !bounds.contains(x0) {
            return Err(Error::Divergence { step: 0, time: t0 });
        }
    }

    let knot = |i: usize| {
        if i == steps {
            tf
        } else {
            t0 + (tf - t0) * (i as f64 / steps as f64)
        }
    };
    let mut traj = HybridTrajectory {
        times: vec![t0],
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(steps),
        modes: vec![mode0],
        events: Vec::new(),
    };
    for i in 0..steps {
        let x = traj.states[i].clone();
        let u = controller(i, &x);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: i, time: knot(i) });
        }
        let prop = propagate_step(system, traj.modes[i], i, knot(i), &x, &u, knot(i + 1), opts, false)?;
        if let Some(bounds) = &opts.bounds {
            if !bounds.contains(&prop.state) {
                return Err(Error::Divergence {
                    step: i + 1,
                    time: knot(i + 1),
                });
            }
        }
        traj.inputs.push(u);
        traj.times.push(knot(i + 1));
        traj.states.push(prop.state);
        traj.modes.push(prop.mode);
        traj.events.extend(prop.events);
    }
    Ok(traj)
}

/// Adaptive flow of a single mode, exposed for tests of the sub-step logic.
#[cfg(test)]
pub(crate) fn flow(mode: &HybridMode, t0: f64, x0: &DVector<f64>, u: &DVector<f64>, t1: f64) -> DVector<f64> {
    let mut rhs = |s: f64, y: &DVector<f64>| mode.field(s, y, u);
    super::integrate::integrate_adaptive(&mut rhs, t0, x0, t1, x0.len(), Tolerances::default(), mode).unwrap()
}
