//! Hybrid systems: modes with continuous vector fields, guarded transitions
//! with reset maps, and simulation of executions with event detection.
//!
//! Sign convention for guards: a guard is positive inside the source domain
//! and a transition fires on a downward crossing of zero.

pub(crate) mod integrate;
pub(crate) mod simulate;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use integrate::{integrate_smooth, Tolerances};
pub use simulate::{
    apply_reset, locate_event, propagate_step, simulate, BoundingBox, EventRecord,
    HybridTrajectory, SegmentJacobian, SimOptions, StepPropagation, EVENT_TOLERANCE,
    MAX_BISECTION_ITERATIONS,
};

/// Label of a discrete mode (domain).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub u8);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

/// Relative step used for central differences of smooth model functions
/// (vector fields, guards, resets) when no analytic derivative is supplied.
/// Roughly the cube root of machine epsilon.
pub const MODEL_FD_STEP: f64 = 6e-6;

type FieldFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type FieldJacobianFn =
    dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) + Send + Sync;
type GuardFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type GuardGradientFn =
    dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> GuardDerivatives + Send + Sync;
type ResetFn = dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync;
type ResetJacobianFn = dyn Fn(f64, &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) + Send + Sync;

/// A continuous domain with its vector field `x' = f(t, x, u)`.
#[derive(Clone)]
pub struct HybridMode {
    pub id: ModeId,
    pub state_dim: usize,
    pub input_dim: usize,
    field: Arc<FieldFn>,
    jacobian: Option<Arc<FieldJacobianFn>>,
}

impl HybridMode {
    pub fn new<F>(id: ModeId, state_dim: usize, input_dim: usize, field: F) -> Self
    where
        F: Fn(f64, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            id,
            state_dim,
            input_dim,
            field: Arc::new(field),
            jacobian: None,
        }
    }

    /// Supplies analytic `(df/dx, df/du)`; otherwise central differences are used.
    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(f64, &DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>)
            + Send
            + Sync
            + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn field(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.field)(t, x, u)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    /// `(df/dx, df/du)` at `(t, x, u)`.
    pub fn jacobians(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.jacobian {
            Some(j) => j(t, x, u),
            None => self.jacobians_fd(t, x, u),
        }
    }

    /// Central-difference `(df/dx, df/du)`, ignoring any analytic Jacobian.
    pub fn jacobians_fd(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.state_dim;
        let m = self.input_dim;
        let mut fx = DMatrix::zeros(n, n);
        let mut fu = DMatrix::zeros(n, m);
        let mut xp = x.clone();
        for k in 0..n {
            let eps = MODEL_FD_STEP * x[k].abs().max(1.0);
            xp[k] = x[k] + eps;
            let hi = xp[k];
            let fp = self.field(t, &xp, u);
            xp[k] = x[k] - eps;
            let width = hi - xp[k];
            let fm = self.field(t, &xp, u);
            xp[k] = x[k];
            fx.set_column(k, &((fp - fm) / width));
        }
        let mut up = u.clone();
        for k in 0..m {
            let eps = MODEL_FD_STEP * u[k].abs().max(1.0);
            up[k] = u[k] + eps;
            let hi = up[k];
            let fp = self.field(t, x, &up);
            up[k] = u[k] - eps;
            let width = hi - up[k];
            let fm = self.field(t, x, &up);
            up[k] = u[k];
            fu.set_column(k, &((fp - fm) / width));
        }
        (fx, fu)
    }
}

impl fmt::Debug for HybridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridMode")
            .field("id", &self.id)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .finish_non_exhaustive()
    }
}

/// Partial derivatives of a guard `g(t, x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardDerivatives {
    pub dx: DVector<f64>,
    pub du: DVector<f64>,
    pub dt: f64,
}

/// A guarded transition `from -> to` with reset map `x+ = R(t, x-)`.
#[derive(Clone)]
pub struct Transition {
    pub from: ModeId,
    pub to: ModeId,
    guard: Arc<GuardFn>,
    guard_gradient: Option<Arc<GuardGradientFn>>,
    reset: Arc<ResetFn>,
    reset_jacobian: Option<Arc<ResetJacobianFn>>,
}

impl Transition {
    pub fn new<G, R>(from: ModeId, to: ModeId, guard: G, reset: R) -> Self
    where
        G: Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        R: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self {
            from,
            to,
            guard: Arc::new(guard),
            guard_gradient: None,
            reset: Arc::new(reset),
            reset_jacobian: None,
        }
    }

    /// Transition with an identity reset (exact identity Jacobian).
    pub fn with_identity_reset<G>(from: ModeId, to: ModeId, guard: G) -> Self
    where
        G: Fn(f64, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self::new(from, to, guard, |_, x| x.clone()).with_reset_jacobian(|_, x| {
            (DMatrix::identity(x.len(), x.len()), DVector::zeros(x.len()))
        })
    }

    pub fn with_guard_gradient<D>(mut self, gradient: D) -> Self
    where
        D: Fn(f64, &DVector<f64>, &DVector<f64>) -> GuardDerivatives + Send + Sync + 'static,
    {
        self.guard_gradient = Some(Arc::new(gradient));
        self
    }

    /// Supplies `(dR/dx, dR/dt)`.
    pub fn with_reset_jacobian<D>(mut self, jacobian: D) -> Self
    where
        D: Fn(f64, &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) + Send + Sync + 'static,
    {
        self.reset_jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn key(&self) -> (ModeId, ModeId) {
        (self.from, self.to)
    }

    pub fn guard(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.guard)(t, x, u)
    }

    pub fn reset(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.reset)(t, x)
    }

    pub fn guard_derivatives(
        &self,
        t: f64,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> GuardDerivatives {
        if let Some(d) = &self.guard_gradient {
            return d(t, x, u);
        }
        let mut dx = DVector::zeros(x.len());
        let mut xp = x.clone();
        for k in 0..x.len() {
            let eps = MODEL_FD_STEP * x[k].abs().max(1.0);
            xp[k] = x[k] + eps;
            let gp = self.guard(t, &xp, u);
            xp[k] = x[k] - eps;
            let gm = self.guard(t, &xp, u);
            xp[k] = x[k];
            dx[k] = (gp - gm) / (2.0 * eps);
        }
        let mut du = DVector::zeros(u.len());
        let mut up = u.clone();
        for k in 0..u.len() {
            let eps = MODEL_FD_STEP * u[k].abs().max(1.0);
            up[k] = u[k] + eps;
            let gp = self.guard(t, x, &up);
            up[k] = u[k] - eps;
            let gm = self.guard(t, x, &up);
            up[k] = u[k];
            du[k] = (gp - gm) / (2.0 * eps);
        }
        let eps = MODEL_FD_STEP * t.abs().max(1.0);
        let dt = (self.guard(t + eps, x, u) - self.guard(t - eps, x, u)) / (2.0 * eps);
        GuardDerivatives { dx, du, dt }
    }

    /// `(dR/dx, dR/dt)` at `(t, x)`.
    pub fn reset_jacobian(&self, t: f64, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        if let Some(j) = &self.reset_jacobian {
            return j(t, x);
        }
        let n = x.len();
        let probe = self.reset(t, x);
        let mut dx = DMatrix::zeros(probe.len(), n);
        let mut xp = x.clone();
        for k in 0..n {
            let eps = MODEL_FD_STEP * x[k].abs().max(1.0);
            xp[k] = x[k] + eps;
            let rp = self.reset(t, &xp);
            xp[k] = x[k] - eps;
            let rm = self.reset(t, &xp);
            xp[k] = x[k];
            dx.set_column(k, &((rp - rm) / (2.0 * eps)));
        }
        let eps = MODEL_FD_STEP * t.abs().max(1.0);
        let dt = (self.reset(t + eps, x) - self.reset(t - eps, x)) / (2.0 * eps);
        (dx, dt)
    }
}

impl fmt::Debug for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Transition")
            .field("from", &self.from)
            .field("to", &self.to)
            .finish_non_exhaustive()
    }
}

/// A collection of modes and the transitions between them. All modes share
/// the same state and input dimensions.
#[derive(Clone, Debug)]
pub struct HybridSystem {
    modes: Vec<HybridMode>,
    transitions: Vec<Transition>,
}

impl HybridSystem {
    pub fn new(modes: Vec<HybridMode>, transitions: Vec<Transition>) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidArgument("hybrid system needs at least one mode".into()))?;
        let (n, m) = (first.state_dim, first.input_dim);
        for mode in &modes {
            if mode.state_dim != n || mode.input_dim != m {
                return Err(Error::Dimension(format!(
                    "mode {} has dimensions ({}, {}), expected ({n}, {m})",
                    mode.id, mode.state_dim, mode.input_dim
                )));
            }
        }
        for (i, mode) in modes.iter().enumerate() {
            if modes[..i].iter().any(|other| other.id == mode.id) {
                return Err(Error::InvalidArgument(format!("duplicate mode {}", mode.id)));
            }
        }
        for (i, tr) in transitions.iter().enumerate() {
            for id in [tr.from, tr.to] {
                if !modes.iter().any(|mode| mode.id == id) {
                    return Err(Error::UnknownMode(id));
                }
            }
            if transitions[..i].iter().any(|other| other.key() == tr.key()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate transition {}->{}",
                    tr.from, tr.to
                )));
            }
        }
        Ok(Self { modes, transitions })
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].input_dim
    }

    pub fn modes(&self) -> &[HybridMode] {
        &self.modes
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn mode(&self, id: ModeId) -> Result<&HybridMode> {
        self.modes
            .iter()
            .find(|mode| mode.id == id)
            .ok_or(Error::UnknownMode(id))
    }

    pub fn outgoing(&self, id: ModeId) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(move |tr| tr.from == id)
    }

    pub fn transition(&self, from: ModeId, to: ModeId) -> Result<&Transition> {
        self.transitions
            .iter()
            .find(|tr| tr.from == from && tr.to == to)
            .ok_or(Error::UnknownTransition { from, to })
    }
}
