//! Planar quadruped with massless two-link legs, knee springs and rotor
//! inertia at the joints. The left/right legs of each pair move together,
//! so the model has a front and a back leg.
//!
//! State: `(x_B, y_B, θ_B, α_f, β_f, α_b, β_b)` followed by their rates.
//! Hip angles `α` are measured from the body's downward axis, positive
//! forward; knee angles `β` are interior flexion. The upper limb points
//! along `(sin φ1, -cos φ1)` with `φ1 = θ + α`, the lower limb along
//! `(sin φ2, -cos φ2)` with `φ2 = φ1 - β`.
//! Input: `(τ_hip,f, τ_knee,f, τ_hip,b, τ_knee,b)`.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::hopper::SEPARATION_HORIZON;
use super::{TaskSpec, WeightTrial};
use crate::error::{Error, Result};
use crate::hybrid::{simulate, HybridMode, HybridSystem, ModeId, SimOptions, Transition};

pub const AERIAL: ModeId = ModeId(1);
pub const FRONT_STANCE: ModeId = ModeId(2);
pub const BACK_STANCE: ModeId = ModeId(3);
pub const FULL_STANCE: ModeId = ModeId(4);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    Front,
    Back,
}

impl Leg {
    fn index(self) -> usize {
        match self {
            Leg::Front => 0,
            Leg::Back => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Leg::Front => "front",
            Leg::Back => "back",
        }
    }

    fn joints(self) -> (usize, usize) {
        match self {
            Leg::Front => (3, 4),
            Leg::Back => (5, 6),
        }
    }
}

/// Which legs are pinned in a mode.
pub fn stance_legs(mode: ModeId) -> [bool; 2] {
    match mode {
        FRONT_STANCE => [true, false],
        BACK_STANCE => [false, true],
        FULL_STANCE => [true, true],
        _ => [false, false],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrupedParams {
    pub mass: f64,
    pub body_inertia: f64,
    pub body_length: f64,
    pub body_height: f64,
    pub upper_length: f64,
    pub lower_length: f64,
    pub knee_stiffness: f64,
    pub knee_rest_angle: f64,
    pub rotor_inertia: f64,
    pub gravity: f64,
}

impl Default for QuadrupedParams {
    fn default() -> Self {
        Self {
            mass: 7.388,
            body_inertia: 0.1285,
            body_length: 0.445,
            body_height: 0.104,
            upper_length: 0.206,
            lower_length: 0.206,
            knee_stiffness: 75.0,
            knee_rest_angle: 1.2,
            rotor_inertia: 1e-3,
            gravity: 9.81,
        }
    }
}

/// Kinematics of one leg at a state.
#[derive(Clone, Debug)]
pub struct LegKinematics {
    pub foot: Vector2<f64>,
    /// `∂foot / ∂(x, y, θ)`.
    pub jb: Matrix2x3<f64>,
    /// `∂foot / ∂(α, β)`.
    pub jl: Matrix2<f64>,
    /// Foot acceleration at zero generalized accelerations.
    pub bias: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

impl QuadrupedParams {
    /// Hip location in the body frame; hips sit on the top corners.
    pub fn hip_offset(&self, leg: Leg) -> Vector2<f64> {
        let half = 0.5 * self.body_length;
        match leg {
            Leg::Front => Vector2::new(half, 0.5 * self.body_height),
            Leg::Back => Vector2::new(-half, 0.5 * self.body_height),
        }
    }

    pub fn leg_kinematics(&self, x: &DVector<f64>, leg: Leg) -> LegKinematics {
        let (ia, ib) = leg.joints();
        let theta = x[2];
        let (s, c) = theta.sin_cos();
        let h = self.hip_offset(leg);
        let rh = Vector2::new(c * h.x - s * h.y, s * h.x + c * h.y);
        let drh = Vector2::new(-rh.y, rh.x);
        let phi1 = theta + x[ia];
        let phi2 = phi1 - x[ib];
        let (s1, c1) = phi1.sin_cos();
        let (s2, c2) = phi2.sin_cos();
        let (l1, l2) = (self.upper_length, self.lower_length);
        let foot = Vector2::new(x[0], x[1]) + rh + Vector2::new(l1 * s1 + l2 * s2, -l1 * c1 - l2 * c2);
        let d_alpha = Vector2::new(l1 * c1 + l2 * c2, l1 * s1 + l2 * s2);
        let d_beta = Vector2::new(-l2 * c2, -l2 * s2);
        let d_theta = drh + d_alpha;
        let jb = Matrix2x3::new(1.0, 0.0, d_theta.x, 0.0, 1.0, d_theta.y);
        let jl = Matrix2::from_columns(&[d_alpha, d_beta]);
        let (theta_d, phi1_d) = (x[9], x[9] + x[7 + ia]);
        let phi2_d = phi1_d - x[7 + ib];
        let bias = -rh * theta_d * theta_d
            - Vector2::new(s1, -c1) * (l1 * phi1_d * phi1_d)
            - Vector2::new(s2, -c2) * (l2 * phi2_d * phi2_d);
        let qb_d = Vector3::new(x[7], x[8], x[9]);
        let ql_d = Vector2::new(x[7 + ia], x[7 + ib]);
        let velocity = jb * qb_d + jl * ql_d;
        LegKinematics {
            foot,
            jb,
            jl,
            bias,
            velocity,
        }
    }

    pub fn foot_position(&self, x: &DVector<f64>, leg: Leg) -> Vector2<f64> {
        self.leg_kinematics(x, leg).foot
    }

    fn joint_torques(&self, x: &DVector<f64>, u: &DVector<f64>, leg: Leg) -> Vector2<f64> {
        let (_, ib) = leg.joints();
        let k = 2 * leg.index();
        Vector2::new(u[k], u[k + 1] - self.knee_stiffness * (x[ib] - self.knee_rest_angle))
    }

    fn leg_inverse(&self, kin: &LegKinematics, x: &DVector<f64>, leg: Leg) -> Result<Matrix2<f64>> {
        let knee = x[leg.joints().1];
        let det = kin.jl.determinant();
        let scale = self.upper_length * self.lower_length;
        if det.abs() <= 1e-9 * scale || !det.is_finite() {
            return Err(Error::SingularLeg {
                leg: leg.name(),
                knee,
            });
        }
        kin.jl.try_inverse().ok_or(Error::SingularLeg {
            leg: leg.name(),
            knee,
        })
    }

    /// Ground reaction force on a pinned foot, from the static balance of
    /// the massless leg: `J_lᵀ λ + τ = 0`.
    pub fn ground_reaction(&self, x: &DVector<f64>, u: &DVector<f64>, leg: Leg) -> Result<Vector2<f64>> {
        let kin = self.leg_kinematics(x, leg);
        let inv = self.leg_inverse(&kin, x, leg)?;
        Ok(-(inv.transpose() * self.joint_torques(x, u, leg)))
    }

    /// Liftoff guard of a pinned leg: `max(λ_y, -2M h(τ)/τ²)`, where `h(τ)`
    /// is the second-order prediction of the foot height `τ =
    /// SEPARATION_HORIZON` after releasing the leg into `after`. Contact
    /// breaks once the normal force vanishes and the released foot would be
    /// clear of the ground; a foot that would accelerate into the ground
    /// stays pinned.
    pub fn liftoff_guard(&self, x: &DVector<f64>, u: &DVector<f64>, leg: Leg, after: [bool; 2]) -> Result<f64> {
        let normal = self.ground_reaction(x, u, leg)?.y;
        let f = self.dynamics(x, u, after)?;
        let kin = self.leg_kinematics(x, leg);
        let (ia, ib) = leg.joints();
        let accel = kin.jb * Vector3::new(f[7], f[8], f[9]) + kin.jl * Vector2::new(f[7 + ia], f[7 + ib]) + kin.bias;
        let tau = SEPARATION_HORIZON;
        let predicted = kin.foot.y + kin.velocity.y * tau + 0.5 * accel.y * tau * tau;
        Ok(normal.max(-2.0 * self.mass * predicted / (tau * tau)))
    }

    /// State derivative with the given legs pinned to the ground.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, stance: [bool; 2]) -> Result<DVector<f64>> {
        let legs = [Leg::Front, Leg::Back];
        let mut force = Vector3::new(0.0, -self.mass * self.gravity, 0.0);
        let mut kins = Vec::with_capacity(2);
        for leg in legs {
            let kin = self.leg_kinematics(x, leg);
            if stance[leg.index()] {
                let inv = self.leg_inverse(&kin, x, leg)?;
                let lambda = -(inv.transpose() * self.joint_torques(x, u, leg));
                force += kin.jb.transpose() * lambda;
                kins.push(Some((kin, inv)));
            } else {
                kins.push(None);
            }
        }
        let qb_dd = Vector3::new(force.x / self.mass, force.y / self.mass, force.z / self.body_inertia);
        let mut out = DVector::zeros(14);
        out.rows_mut(0, 7).copy_from(&x.rows(7, 7));
        out[7] = qb_dd.x;
        out[8] = qb_dd.y;
        out[9] = qb_dd.z;
        for leg in legs {
            let (ia, ib) = leg.joints();
            let ql_dd = match &kins[leg.index()] {
                Some((kin, inv)) => -(inv * (kin.jb * qb_dd + kin.bias)),
                None => self.joint_torques(x, u, leg) / self.rotor_inertia,
            };
            out[7 + ia] = ql_dd.x;
            out[7 + ib] = ql_dd.y;
        }
        Ok(out)
    }

    /// Touchdown map: body state unchanged, joint rates of `leg` replaced
    /// so the foot velocity is zero.
    pub fn impact(&self, x: &DVector<f64>, leg: Leg) -> Result<DVector<f64>> {
        let kin = self.leg_kinematics(x, leg);
        let inv = self.leg_inverse(&kin, x, leg)?;
        let qb_d = Vector3::new(x[7], x[8], x[9]);
        let ql_d = -(inv * (kin.jb * qb_d));
        let (ia, ib) = leg.joints();
        let mut out = x.clone();
        out[7 + ia] = ql_d.x;
        out[7 + ib] = ql_d.y;
        Ok(out)
    }

    /// Mechanical energy: body, spring potentials, and rotor kinetic
    /// energy of swing legs (pinned legs are kinematic and carry none).
    pub fn energy(&self, x: &DVector<f64>, stance: [bool; 2]) -> f64 {
        let mut e = 0.5 * self.mass * (x[7] * x[7] + x[8] * x[8])
            + 0.5 * self.body_inertia * x[9] * x[9]
            + self.mass * self.gravity * x[1];
        for leg in [Leg::Front, Leg::Back] {
            let (ia, ib) = leg.joints();
            let dq = x[ib] - self.knee_rest_angle;
            e += 0.5 * self.knee_stiffness * dq * dq;
            if !stance[leg.index()] {
                e += 0.5 * self.rotor_inertia * (x[7 + ia] * x[7 + ia] + x[7 + ib] * x[7 + ib]);
            }
        }
        e
    }
}

fn nan_state() -> DVector<f64> {
    DVector::from_element(14, f64::NAN)
}

fn mode(params: &QuadrupedParams, id: ModeId) -> HybridMode {
    let p = params.clone();
    let stance = stance_legs(id);
    HybridMode::new(id, 14, 4, move |_, x, u| {
        p.dynamics(x, u, stance).unwrap_or_else(|err| {
            log::debug!("{err}");
            nan_state()
        })
    })
}

fn touchdown(params: &QuadrupedParams, from: ModeId, to: ModeId, leg: Leg) -> Transition {
    let p = params.clone();
    let q = params.clone();
    Transition::new(
        from,
        to,
        move |_, x, _| p.foot_position(x, leg).y,
        move |_, x| q.impact(x, leg).unwrap_or_else(|_| nan_state()),
    )
}

fn liftoff(params: &QuadrupedParams, from: ModeId, to: ModeId, leg: Leg) -> Transition {
    let p = params.clone();
    let after = stance_legs(to);
    Transition::with_identity_reset(from, to, move |_, x, u| {
        p.liftoff_guard(x, u, leg, after).unwrap_or(f64::NAN)
    })
}

/// Four-domain quadruped: aerial, front stance, back stance, full stance.
pub fn quadruped_system(params: &QuadrupedParams) -> HybridSystem {
    let modes = [AERIAL, FRONT_STANCE, BACK_STANCE, FULL_STANCE]
        .into_iter()
        .map(|id| mode(params, id))
        .collect();
    let transitions = vec![
        touchdown(params, AERIAL, FRONT_STANCE, Leg::Front),
        touchdown(params, AERIAL, BACK_STANCE, Leg::Back),
        touchdown(params, FRONT_STANCE, FULL_STANCE, Leg::Back),
        touchdown(params, BACK_STANCE, FULL_STANCE, Leg::Front),
        liftoff(params, FULL_STANCE, FRONT_STANCE, Leg::Back),
        liftoff(params, FULL_STANCE, BACK_STANCE, Leg::Front),
        liftoff(params, FRONT_STANCE, AERIAL, Leg::Front),
        liftoff(params, BACK_STANCE, AERIAL, Leg::Back),
    ];
    HybridSystem::new(modes, transitions).expect("quadruped system is well formed")
}

pub const QUADRUPED_DURATION: f64 = 0.35;
pub const QUADRUPED_STEPS: usize = 35;
pub const QUADRUPED_HEIGHT: f64 = 0.3;
pub const QUADRUPED_SPEED: f64 = 0.25;
pub const QUADRUPED_HIP: f64 = 0.6;
pub const QUADRUPED_KNEE: f64 = 1.2;

/// Initial configuration: body at 0.3 m moving forward at 0.25 m/s, both
/// legs at hip 0.6 rad and knee 1.2 rad.
pub fn quadruped_initial_state() -> DVector<f64> {
    let mut x = DVector::zeros(14);
    x[1] = QUADRUPED_HEIGHT;
    x[3] = QUADRUPED_HIP;
    x[4] = QUADRUPED_KNEE;
    x[5] = QUADRUPED_HIP;
    x[6] = QUADRUPED_KNEE;
    x[7] = QUADRUPED_SPEED;
    x
}

/// Translate the initial configuration forward over the horizon at the
/// nominal speed.
pub fn quadruped_task(trial: &WeightTrial) -> TaskSpec {
    let x0 = quadruped_initial_state();
    let mut x_goal = x0.clone();
    x_goal[0] += QUADRUPED_SPEED * QUADRUPED_DURATION;
    TaskSpec {
        x0,
        x_goal,
        mode0: AERIAL,
        duration: QUADRUPED_DURATION,
        steps: QUADRUPED_STEPS,
        weights: trial.to_weights(14, 4, &[]),
    }
}

/// Default weights: `R = 5e-4 I`, `Q_N = 500 I`, `Q_χ = 1`.
pub fn quadruped_weights() -> WeightTrial {
    WeightTrial {
        q_chi: 1.0,
        q_n: 500.0,
        q_stage: 0.0,
        r_air: 5e-4,
        r_stance: 5e-4,
    }
}

/// Joint PD gains and targets used to build the initial input sequence.
/// The front knee target is slightly straighter so the front foot reaches
/// the ground first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGuess {
    pub kp: f64,
    pub kd: f64,
    pub targets: [f64; 4],
}

impl Default for PdGuess {
    fn default() -> Self {
        Self {
            kp: 4.0,
            kd: 0.1,
            targets: [QUADRUPED_HIP, QUADRUPED_KNEE - 0.05, QUADRUPED_HIP, QUADRUPED_KNEE],
        }
    }
}

/// Records the joint torques of a PD controller toward `guess.targets`
/// along the simulated execution (knee spring compensated at the target).
pub fn quadruped_initial_inputs(
    params: &QuadrupedParams,
    task: &TaskSpec,
    guess: &PdGuess,
    sim: &SimOptions,
) -> Result<Vec<DVector<f64>>> {
    let system = quadruped_system(params);
    let pd = |x: &DVector<f64>| {
        let mut u = DVector::zeros(4);
        for (k, joint) in (3..7).enumerate() {
            u[k] = guess.kp * (guess.targets[k] - x[joint]) - guess.kd * x[7 + joint];
            if joint == 4 || joint == 6 {
                u[k] += params.knee_stiffness * (guess.targets[k] - params.knee_rest_angle);
            }
        }
        u
    };
    let traj = simulate(
        &system,
        &task.x0,
        task.mode0,
        |_, x| pd(x),
        0.0,
        task.duration,
        task.steps,
        sim,
    )?;
    Ok(traj.inputs)
}

/// `(∂f/∂x, ∂f/∂u)` for a mode by central differences (the quadruped has no
/// analytic Jacobian).
pub fn quadruped_jacobians(
    params: &QuadrupedParams,
    id: ModeId,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    mode(params, id).jacobians_fd(0.0, x, u)
}
