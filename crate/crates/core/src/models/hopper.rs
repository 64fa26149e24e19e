//! Planar rocket hopper: point-mass body, massless spring leg with a hip
//! torque and a thrust along the leg axis.
//!
//! State `(x_B, y_B, θ, ẋ_B, ẏ_B, θ̇)` with `θ` the leg angle from vertical
//! (foot at `body + l (sin θ, -cos θ)`); input `(τ_hip, F_leg)`.

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{TaskSpec, WeightTrial};
use crate::hybrid::{GuardDerivatives, HybridMode, HybridSystem, ModeId, Transition};

pub const AERIAL: ModeId = ModeId(1);
pub const STANCE: ModeId = ModeId(2);

/// Look-ahead used by the liftoff guard to decide whether a released foot
/// separates from the ground.
pub const SEPARATION_HORIZON: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HopperParams {
    pub mass: f64,
    pub spring_constant: f64,
    pub rest_length: f64,
    pub rotor_inertia: f64,
    pub gravity: f64,
}

impl Default for HopperParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            spring_constant: 250.0,
            rest_length: 0.75,
            rotor_inertia: 0.05,
            gravity: 9.81,
        }
    }
}

impl HopperParams {
    /// Leg length in stance (foot on the ground).
    pub fn stance_length(&self, x: &DVector<f64>) -> f64 {
        x[1] / x[2].cos()
    }

    pub fn foot_height(&self, x: &DVector<f64>) -> f64 {
        x[1] - self.rest_length * x[2].cos()
    }

    /// Axial spring force in stance; the liftoff guard.
    pub fn spring_force(&self, x: &DVector<f64>) -> f64 {
        self.spring_constant * (self.rest_length - self.stance_length(x))
    }

    /// Kinetic + gravitational + spring energy in stance.
    pub fn stance_energy(&self, x: &DVector<f64>) -> f64 {
        let compression = self.rest_length - self.stance_length(x);
        0.5 * self.mass * (x[3] * x[3] + x[4] * x[4])
            + self.mass * self.gravity * x[1]
            + 0.5 * self.spring_constant * compression * compression
    }

    /// Height, rate and acceleration of the foot of a rigid leg of rest
    /// length at the current angle, i.e. the foot once released into flight.
    pub fn released_foot(&self, x: &DVector<f64>, u: &DVector<f64>) -> (f64, f64, f64) {
        let (s, c) = x[2].sin_cos();
        let l0 = self.rest_length;
        let h = x[1] - l0 * c;
        let h_dot = x[4] + l0 * s * x[5];
        let h_dd = u[1] * c / self.mass - self.gravity + l0 * c * x[5] * x[5] + l0 * s * u[0] / self.rotor_inertia;
        (h, h_dot, h_dd)
    }

    /// Liftoff guard `max(k (l0 - l), -2m h(τ)/τ²)` with `h(τ)` the
    /// second-order prediction of the released foot height after
    /// `SEPARATION_HORIZON`: contact breaks once the spring is unloaded and
    /// the released foot would be clear of the ground.
    pub fn liftoff_guard(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.spring_force(x).max(self.separation(x, u))
    }

    fn separation(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let tau = SEPARATION_HORIZON;
        let (h, h_dot, h_dd) = self.released_foot(x, u);
        -self.mass * (2.0 * h / (tau * tau) + 2.0 * h_dot / tau + h_dd)
    }

    /// Touchdown map: body state and leg angle are kept, the leg rate
    /// becomes the polar rate of the body about the now pinned foot,
    /// `θ̇ = -(ẋ cos θ + ẏ sin θ) / l`. The massless leg cannot keep its
    /// flight swing once the foot is fixed.
    pub fn touchdown_reset(&self, x: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        let mut out = x.clone();
        out[5] = -(x[3] * c * c + x[4] * s * c) / x[1];
        out
    }

    fn touchdown_reset_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let (y, xd, yd) = (x[1], x[3], x[4]);
        let mut d = DMatrix::identity(6, 6);
        d[(5, 1)] = (xd * c * c + yd * s * c) / (y * y);
        d[(5, 2)] = (2.0 * xd * s * c - yd * (c * c - s * s)) / y;
        d[(5, 3)] = -c * c / y;
        d[(5, 4)] = -s * c / y;
        d[(5, 5)] = 0.0;
        d
    }

    fn liftoff_guard_gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> GuardDerivatives {
        let (s, c) = x[2].sin_cos();
        if self.spring_force(x) >= self.separation(x, u) {
            let k = self.spring_constant;
            return GuardDerivatives {
                dx: dvector![0.0, -k / c, -k * x[1] * s / (c * c), 0.0, 0.0, 0.0],
                du: DVector::zeros(u.len()),
                dt: 0.0,
            };
        }
        let (m, l0, ir, tau) = (self.mass, self.rest_length, self.rotor_inertia, SEPARATION_HORIZON);
        let thd = x[5];
        let h_dd_theta = -u[1] * s / m - l0 * s * thd * thd + l0 * c * u[0] / ir;
        GuardDerivatives {
            dx: dvector![
                0.0,
                -2.0 * m / (tau * tau),
                -m * (2.0 * l0 * s / (tau * tau) + 2.0 * l0 * c * thd / tau + h_dd_theta),
                0.0,
                -2.0 * m / tau,
                -m * (2.0 * l0 * s / tau + 2.0 * l0 * c * thd)
            ],
            du: dvector![-m * l0 * s / ir, -c],
            dt: 0.0,
        }
    }

    pub fn aerial_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        let thrust = u[1];
        dvector![
            x[3],
            x[4],
            x[5],
            -thrust * s / self.mass,
            thrust * c / self.mass - self.gravity,
            u[0] / self.rotor_inertia
        ]
    }

    fn aerial_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, c) = x[2].sin_cos();
        let m = self.mass;
        let mut fx = DMatrix::zeros(6, 6);
        fx[(0, 3)] = 1.0;
        fx[(1, 4)] = 1.0;
        fx[(2, 5)] = 1.0;
        fx[(3, 2)] = -u[1] * c / m;
        fx[(4, 2)] = -u[1] * s / m;
        let mut fu = DMatrix::zeros(6, 2);
        fu[(3, 1)] = -s / m;
        fu[(4, 1)] = c / m;
        fu[(5, 0)] = 1.0 / self.rotor_inertia;
        (fx, fu)
    }

    /// Stance dynamics in polar coordinates about the foot: radial force
    /// `k (l0 - l) + F` along `e_r = (-sin θ, cos θ)` and the hip torque as a
    /// tangential force `τ / l` along `e_θ = (-cos θ, -sin θ)`.
    pub fn stance_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (s, c) = x[2].sin_cos();
        let m = self.mass;
        let l = x[1] / c;
        let fr = self.spring_constant * (self.rest_length - l) + u[1];
        let ft = u[0] / l;
        let ax = (-s * fr - c * ft) / m;
        let ay = (c * fr - s * ft) / m - self.gravity;
        let l_dot = -s * x[3] + c * x[4];
        let theta_dd = (ft / m + self.gravity * s - 2.0 * l_dot * x[5]) / l;
        dvector![x[3], x[4], x[5], ax, ay, theta_dd]
    }

    fn stance_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (s, c) = x[2].sin_cos();
        let (m, k, g) = (self.mass, self.spring_constant, self.gravity);
        let (y, xd, yd, thd) = (x[1], x[3], x[4], x[5]);
        let (tau, thrust) = (u[0], u[1]);
        let l = y / c;
        let l_y = 1.0 / c;
        let l_th = y * s / (c * c);
        let fr = k * (self.rest_length - l) + thrust;
        let ft = tau / l;
        let (fr_y, fr_th) = (-k * l_y, -k * l_th);
        let (ft_y, ft_th) = (-tau * l_y / (l * l), -tau * l_th / (l * l));

        let ax_y = (-s * fr_y - c * ft_y) / m;
        let ax_th = (-c * fr - s * fr_th + s * ft - c * ft_th) / m;
        let ay_y = (c * fr_y - s * ft_y) / m;
        let ay_th = (-s * fr + c * fr_th - c * ft - s * ft_th) / m;

        let l_dot = -s * xd + c * yd;
        let num = ft / m + g * s - 2.0 * l_dot * thd;
        let num_y = ft_y / m;
        let num_th = ft_th / m + g * c - 2.0 * thd * (-c * xd - s * yd);
        let tdd_y = num_y / l - num * l_y / (l * l);
        let tdd_th = num_th / l - num * l_th / (l * l);

        let fx = dmatrix![
            0.0, 0.0, 0.0, 1.0, 0.0, 0.0;
            0.0, 0.0, 0.0, 0.0, 1.0, 0.0;
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0;
            0.0, ax_y, ax_th, 0.0, 0.0, 0.0;
            0.0, ay_y, ay_th, 0.0, 0.0, 0.0;
            0.0, tdd_y, tdd_th, 2.0 * s * thd / l, -2.0 * c * thd / l, -2.0 * l_dot / l
        ];
        let fu = dmatrix![
            0.0, 0.0;
            0.0, 0.0;
            0.0, 0.0;
            -c / (m * l), -s / m;
            -s / (m * l), c / m;
            1.0 / (m * l * l), 0.0
        ];
        (fx, fu)
    }
}

/// Two-domain hopper: aerial `D1` and stance `D2`. Liftoff is an identity
/// reset; touchdown keeps the body state and slaves the leg rate to it.
pub fn hopper_system(params: &HopperParams) -> HybridSystem {
    let p = params.clone();
    let pj = params.clone();
    let aerial = HybridMode::new(AERIAL, 6, 2, move |_, x, u| p.aerial_field(x, u))
        .with_jacobian(move |_, x, u| pj.aerial_jacobian(x, u));
    let p = params.clone();
    let pj = params.clone();
    let stance = HybridMode::new(STANCE, 6, 2, move |_, x, u| p.stance_field(x, u))
        .with_jacobian(move |_, x, u| pj.stance_jacobian(x, u));

    let p = params.clone();
    let pr = params.clone();
    let pd = params.clone();
    let l0 = params.rest_length;
    let touchdown = Transition::new(AERIAL, STANCE, move |_, x, _| p.foot_height(x), move |_, x| pr.touchdown_reset(x))
        .with_reset_jacobian(move |_, x| (pd.touchdown_reset_jacobian(x), DVector::zeros(6)))
        .with_guard_gradient(move |_, x, u| GuardDerivatives {
            dx: dvector![0.0, 1.0, l0 * x[2].sin(), 0.0, 0.0, 0.0],
            du: DVector::zeros(u.len()),
            dt: 0.0,
        });
    let p = params.clone();
    let pg = params.clone();
    let liftoff = Transition::with_identity_reset(STANCE, AERIAL, move |_, x, u| p.liftoff_guard(x, u))
        .with_guard_gradient(move |_, x, u| pg.liftoff_guard_gradient(x, u));
    HybridSystem::new(vec![aerial, stance], vec![touchdown, liftoff]).expect("hopper system is well formed")
}

pub const HOPPER_DURATION: f64 = 1.5;
pub const HOPPER_STEPS: usize = 150;

/// Hop from rest at 2 m to a point 0.2 m forward, also at rest.
pub fn hopper_task(trial: &WeightTrial) -> TaskSpec {
    let x0 = dvector![0.0, 2.0, 0.0, 0.0, 0.0, 0.0];
    let mut x_goal = x0.clone();
    x_goal[0] = 0.2;
    TaskSpec {
        x0,
        x_goal,
        mode0: AERIAL,
        duration: HOPPER_DURATION,
        steps: HOPPER_STEPS,
        weights: trial.to_weights(6, 2, &[(AERIAL, trial.r_air), (STANCE, trial.r_stance)]),
    }
}

/// Zero hip torque; half the body weight as leg thrust over the window in
/// which the passive drop is in stance.
pub fn hopper_initial_inputs(params: &HopperParams, task: &TaskSpec) -> Vec<DVector<f64>> {
    let h = task.duration / task.steps as f64;
    let drop = task.x0[1] - params.rest_length;
    let touchdown = (2.0 * drop / params.gravity).sqrt();
    let omega = (params.spring_constant / params.mass).sqrt();
    let liftoff = touchdown + std::f64::consts::PI / omega;
    (0..task.steps)
        .map(|i| {
            let t = i as f64 * h;
            let thrust = if t >= touchdown && t < liftoff {
                0.5 * params.mass * params.gravity
            } else {
                0.0
            };
            dvector![0.0, thrust]
        })
        .collect()
}
