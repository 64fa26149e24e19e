use approx::assert_relative_eq;
use nalgebra::{dvector, DVector, Vector2};
use proptest::prelude::*;

use super::hopper::{self, HopperParams};
use super::quadruped::{self, Leg, QuadrupedParams};
use super::*;
use crate::hybrid::integrate::{integrate_smooth, Tolerances};
use crate::hybrid::{simulate, SimOptions};

fn max_abs_diff(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn hopper_aerial_is_ballistic_without_input() {
    let p = HopperParams::default();
    let sys = hopper_system(&p);
    let mode = sys.mode(hopper::AERIAL).unwrap();
    let x0 = dvector![0.1, 2.0, 0.2, 0.5, 1.0, 0.3];
    let t = 0.3;
    let x = integrate_smooth(mode, 0.0, &x0, &DVector::zeros(2), t, Tolerances::default()).unwrap();
    let expect = dvector![
        0.1 + 0.5 * t,
        2.0 + t - 0.5 * p.gravity * t * t,
        0.2 + 0.3 * t,
        0.5,
        1.0 - p.gravity * t,
        0.3
    ];
    assert_relative_eq!(x, expect, epsilon = 1e-9);
}

#[test]
fn hopper_spring_balances_weight() {
    let p = HopperParams::default();
    let l = p.rest_length - p.mass * p.gravity / p.spring_constant;
    let x = dvector![0.0, l, 0.0, 0.0, 0.0, 0.0];
    let f = p.stance_field(&x, &DVector::zeros(2));
    assert_relative_eq!(f, DVector::zeros(6), epsilon = 1e-12);
}

#[test]
fn hopper_stance_conserves_energy() {
    let p = HopperParams::default();
    let sys = hopper_system(&p);
    let mode = sys.mode(hopper::STANCE).unwrap();
    // Rates consistent with a pinned foot at the origin: velocity
    // (l̇ e_r + l θ̇ e_θ) with θ̇ chosen freely.
    let (theta, l, l_dot, theta_dot) = (0.15_f64, 0.6, -0.8, 0.4);
    let (s, c) = theta.sin_cos();
    let x0 = dvector![
        -l * s,
        l * c,
        theta,
        -l_dot * s - l * theta_dot * c,
        l_dot * c - l * theta_dot * s,
        theta_dot
    ];
    let e0 = p.stance_energy(&x0);
    let x = integrate_smooth(mode, 0.0, &x0, &DVector::zeros(2), 0.05, Tolerances::default()).unwrap();
    assert_relative_eq!(p.stance_energy(&x), e0, max_relative = 1e-8);
    // The foot stays at the origin.
    let l1 = p.stance_length(&x);
    assert!((x[0] + l1 * x[2].sin()).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hopper_analytic_jacobians_match_differences(
        y in 0.4f64..1.5, th in -0.6f64..0.6,
        xd in -2.0f64..2.0, yd in -2.0f64..2.0, thd in -3.0f64..3.0,
        tau in -1.0f64..1.0, thrust in -10.0f64..10.0,
    ) {
        let sys = hopper_system(&HopperParams::default());
        let x = dvector![0.3, y, th, xd, yd, thd];
        let u = dvector![tau, thrust];
        for mode in sys.modes() {
            let (fx, fu) = mode.jacobians(0.0, &x, &u);
            let (gx, gu) = mode.jacobians_fd(0.0, &x, &u);
            let scale = 1.0 + gx.abs().max().max(gu.abs().max());
            prop_assert!(max_abs_diff(&fx, &gx) < 1e-7 * scale, "{}: {}", mode.id, max_abs_diff(&fx, &gx));
            prop_assert!(max_abs_diff(&fu, &gu) < 1e-7 * scale);
        }
    }
}

#[test]
fn hopper_analytic_guard_gradients_match_differences() {
    let sys = hopper_system(&HopperParams::default());
    // Nearly unloaded leg extending fast (spring branch of the liftoff
    // guard) and a slightly extended one whose released foot would fall
    // (separation branch).
    let cases = [
        (dvector![0.0, 0.749 * 0.1f64.cos(), 0.1, 0.1, 1.0, 0.3], dvector![0.1, 2.0]),
        (dvector![0.0, 0.7501 * 0.1f64.cos(), 0.1, 0.1, -0.0725, 0.3], dvector![-0.01, 1.0]),
    ];
    let eps = 1e-6;
    for (x, u) in &cases {
        for tr in sys.transitions() {
            let d = tr.guard_derivatives(0.0, x, u);
            let mut fx = DVector::zeros(6);
            for k in 0..6 {
                let mut xp = x.clone();
                xp[k] += eps;
                let gp = tr.guard(0.0, &xp, u);
                xp[k] -= 2.0 * eps;
                fx[k] = (gp - tr.guard(0.0, &xp, u)) / (2.0 * eps);
            }
            let mut fu = DVector::zeros(2);
            for k in 0..2 {
                let mut up = u.clone();
                up[k] += eps;
                let gp = tr.guard(0.0, x, &up);
                up[k] -= 2.0 * eps;
                fu[k] = (gp - tr.guard(0.0, x, &up)) / (2.0 * eps);
            }
            assert_relative_eq!(d.dx, fx, epsilon = 1e-5, max_relative = 1e-6);
            assert_relative_eq!(d.du, fu, epsilon = 1e-5, max_relative = 1e-6);
        }
    }
    let p = HopperParams::default();
    assert!(p.liftoff_guard(&cases[0].0, &cases[0].1) == p.spring_force(&cases[0].0));
    assert!(p.liftoff_guard(&cases[1].0, &cases[1].1) > p.spring_force(&cases[1].0));
}

#[test]
fn hopper_touchdown_pins_the_foot() {
    let p = HopperParams::default();
    let sys = hopper_system(&p);
    let td = sys.transitions().iter().find(|t| t.key() == (hopper::AERIAL, hopper::STANCE)).unwrap();
    let theta = -0.3f64;
    let x = dvector![0.1, p.rest_length * theta.cos(), theta, 0.4, -3.0, -12.0];
    let xp = td.reset(0.0, &x);
    assert_eq!(xp.rows(0, 5), x.rows(0, 5));
    // Foot x = x_B + y_B tan θ stays put under the stance field.
    let f = p.stance_field(&xp, &dvector![0.3, 1.0]);
    let (s, c) = theta.sin_cos();
    let foot_rate = f[0] + f[1] * s / c + xp[1] * f[2] / (c * c);
    assert!(foot_rate.abs() < 1e-12, "{foot_rate}");

    let (d, _) = td.reset_jacobian(0.0, &x);
    let eps = 1e-6;
    for k in 0..6 {
        let mut a = x.clone();
        a[k] += eps;
        let mut b = x.clone();
        b[k] -= eps;
        let col = (td.reset(0.0, &a) - td.reset(0.0, &b)) / (2.0 * eps);
        assert_relative_eq!(d.column(k).into_owned(), col, epsilon = 1e-7);
    }
}

#[test]
fn hopper_task_moves_forward() {
    let trials = hopper_weight_trials();
    assert_eq!(trials.len(), 4);
    let task = hopper_task(&trials[0]);
    assert_eq!(task.x_goal[0] - task.x0[0], 0.2);
    assert_eq!(task.steps, 150);
    assert_eq!(task.weights.r_for(hopper::STANCE)[(0, 0)], 0.1);
    assert_eq!(task.weights.r_for(hopper::AERIAL)[(0, 0)], 0.01);
}

#[test]
fn hopper_initial_guess_lands_and_lifts_off() {
    let p = HopperParams::default();
    let sys = hopper_system(&p);
    let task = hopper_task(&hopper_weight_trials()[0]);
    let u = hopper_initial_inputs(&p, &task);
    let traj = simulate(&sys, &task.x0, task.mode0, |i, _| u[i].clone(), 0.0, task.duration, task.steps, &SimOptions::default())
        .unwrap();
    let seq = traj.mode_sequence();
    assert!(seq.len() >= 3, "{seq:?}");
    assert_eq!(&seq[..3], &[hopper::AERIAL, hopper::STANCE, hopper::AERIAL]);
    let touchdown = traj.events[0].time;
    assert_relative_eq!(touchdown, (2.0 * (2.0 - p.rest_length) / p.gravity).sqrt(), epsilon = 1e-8);
}

// Foot position by walking along the kinematic chain with explicit rotations.
fn chain_foot(p: &QuadrupedParams, x: &DVector<f64>, leg: Leg) -> Vector2<f64> {
    let (ia, ib, side) = match leg {
        Leg::Front => (3, 4, 1.0),
        Leg::Back => (5, 6, -1.0),
    };
    let rot = |a: f64, v: Vector2<f64>| nalgebra::Rotation2::new(a) * v;
    let hip = Vector2::new(x[0], x[1]) + rot(x[2], Vector2::new(side * p.body_length / 2.0, p.body_height / 2.0));
    let down = Vector2::new(0.0, -1.0);
    let knee = hip + rot(x[2] + x[ia], down) * p.upper_length;
    knee + rot(x[2] + x[ia] - x[ib], down) * p.lower_length
}

fn sample_state(seed: &[f64; 14]) -> DVector<f64> {
    let mut x = quadruped::quadruped_initial_state();
    for (k, s) in seed.iter().enumerate() {
        x[k] += 0.2 * s;
    }
    x
}

const SEED: [f64; 14] = [0.3, -0.2, 0.4, 0.5, -0.7, -0.3, 0.6, 1.0, -0.8, 0.9, 2.0, -1.5, 1.2, -2.2];

#[test]
fn quadruped_foot_matches_kinematic_chain() {
    let p = QuadrupedParams::default();
    let x = sample_state(&SEED);
    for leg in [Leg::Front, Leg::Back] {
        assert_relative_eq!(p.foot_position(&x, leg), chain_foot(&p, &x, leg), epsilon = 1e-14);
    }
    // Initial configuration: feet directly under the hips, 12 mm above ground.
    let x0 = quadruped::quadruped_initial_state();
    let foot = p.foot_position(&x0, Leg::Front);
    assert_relative_eq!(foot.x, p.body_length / 2.0, epsilon = 1e-12);
    assert!(foot.y > 0.005 && foot.y < 0.02, "{}", foot.y);
}

#[test]
fn quadruped_leg_jacobians_match_differences() {
    let p = QuadrupedParams::default();
    let x = sample_state(&SEED);
    let eps = 1e-6;
    for leg in [Leg::Front, Leg::Back] {
        let kin = p.leg_kinematics(&x, leg);
        let (ia, ib) = match leg {
            Leg::Front => (3, 4),
            Leg::Back => (5, 6),
        };
        let cols = [(0, kin.jb.column(0)), (1, kin.jb.column(1)), (2, kin.jb.column(2))]
            .into_iter()
            .map(|(k, c)| (k, c.into_owned()))
            .chain([(ia, kin.jl.column(0).into_owned()), (ib, kin.jl.column(1).into_owned())]);
        for (k, col) in cols {
            let mut xp = x.clone();
            xp[k] += eps;
            let fp = chain_foot(&p, &xp, leg);
            xp[k] -= 2.0 * eps;
            let fd = (fp - chain_foot(&p, &xp, leg)) / (2.0 * eps);
            assert_relative_eq!(col, fd, epsilon = 1e-8);
        }
        // Bias: second derivative of the foot along the free motion q(t) = q + q̇ t.
        let h = 1e-4;
        let shift = |s: f64| {
            let mut y = x.clone();
            for k in 0..7 {
                y[k] += s * x[7 + k];
            }
            chain_foot(&p, &y, leg)
        };
        let fd = (shift(h) - shift(0.0) * 2.0 + shift(-h)) / (h * h);
        assert_relative_eq!(kin.bias, fd, epsilon = 1e-5, max_relative = 1e-5);
        assert_relative_eq!(kin.jl.determinant(), p.upper_length * p.lower_length * x[ib].sin(), epsilon = 1e-14);
    }
}

#[test]
fn quadruped_aerial_body_is_ballistic() {
    let p = QuadrupedParams::default();
    let x = sample_state(&SEED);
    let u = dvector![1.0, -2.0, 0.5, 0.3];
    let f = p.dynamics(&x, &u, [false, false]).unwrap();
    assert_eq!(f[7], 0.0);
    assert_relative_eq!(f[8], -p.gravity);
    assert_eq!(f[9], 0.0);
    assert_relative_eq!(f[10], 1.0 / p.rotor_inertia);
    assert_relative_eq!(f[11], (-2.0 - p.knee_stiffness * (x[4] - p.knee_rest_angle)) / p.rotor_inertia);
}

#[test]
fn quadruped_impact_zeroes_foot_velocity() {
    let p = QuadrupedParams::default();
    let x = sample_state(&SEED);
    for leg in [Leg::Front, Leg::Back] {
        let post = p.impact(&x, leg).unwrap();
        assert!(p.leg_kinematics(&post, leg).velocity.norm() < 1e-12);
        assert_eq!(post.rows(0, 10), x.rows(0, 10));
    }
}

#[test]
fn quadruped_stance_keeps_feet_pinned_and_conserves_energy() {
    let p = QuadrupedParams::default();
    let sys = quadruped_system(&p);
    let mut x = quadruped::quadruped_initial_state();
    x[1] -= 0.02;
    x[8] = -0.3;
    x[9] = 0.2;
    for (id, legs) in [
        (quadruped::FRONT_STANCE, [Leg::Front].as_slice()),
        (quadruped::BACK_STANCE, [Leg::Back].as_slice()),
        (quadruped::FULL_STANCE, [Leg::Front, Leg::Back].as_slice()),
    ] {
        let mut x0 = x.clone();
        for leg in legs {
            x0 = p.impact(&x0, *leg).unwrap();
        }
        let stance = quadruped::stance_legs(id);
        let mode = sys.mode(id).unwrap();
        let x1 = integrate_smooth(mode, 0.0, &x0, &DVector::zeros(4), 0.05, Tolerances::default()).unwrap();
        assert_relative_eq!(p.energy(&x1, stance), p.energy(&x0, stance), max_relative = 1e-8);
        for leg in legs {
            let drift = (p.foot_position(&x1, *leg) - p.foot_position(&x0, *leg)).norm();
            assert!(drift < 1e-8, "{id} {leg:?} drift {drift}");
        }
    }
}

#[test]
fn quadruped_aerial_conserves_energy() {
    let p = QuadrupedParams::default();
    let sys = quadruped_system(&p);
    let x0 = sample_state(&SEED);
    let mode = sys.mode(quadruped::AERIAL).unwrap();
    let x1 = integrate_smooth(mode, 0.0, &x0, &DVector::zeros(4), 0.2, Tolerances::default()).unwrap();
    assert_relative_eq!(p.energy(&x1, [false; 2]), p.energy(&x0, [false; 2]), max_relative = 1e-8);
}

#[test]
fn quadruped_straight_knee_is_singular() {
    let p = QuadrupedParams::default();
    let mut x = quadruped::quadruped_initial_state();
    x[4] = 0.0;
    let err = p.dynamics(&x, &DVector::zeros(4), [true, false]).unwrap_err();
    assert!(matches!(err, Error::SingularLeg { leg: "front", .. }), "{err}");
    assert!(p.dynamics(&x, &DVector::zeros(4), [false, true]).is_ok());
}

#[test]
fn quadruped_mirror_symmetry() {
    // Reflecting x and swapping legs maps the model onto one whose knees
    // bend the other way.
    let p = QuadrupedParams::default();
    let mirrored = QuadrupedParams {
        knee_rest_angle: -p.knee_rest_angle,
        ..p.clone()
    };
    let reflect = |x: &DVector<f64>| {
        let mut y = x.clone();
        for off in [0, 7] {
            y[off] = -x[off];
            y[off + 1] = x[off + 1];
            y[off + 2] = -x[off + 2];
            y[off + 3] = -x[off + 5];
            y[off + 4] = -x[off + 6];
            y[off + 5] = -x[off + 3];
            y[off + 6] = -x[off + 4];
        }
        y
    };
    let x = sample_state(&SEED);
    let u = dvector![0.4, -0.2, 0.1, 0.7];
    let u_m = dvector![-u[2], -u[3], -u[0], -u[1]];
    for (stance, stance_m) in [([false, false], [false, false]), ([true, false], [false, true]), ([true, true], [true, true])] {
        let f = p.dynamics(&x, &u, stance).unwrap();
        let g = mirrored.dynamics(&reflect(&x), &u_m, stance_m).unwrap();
        assert_relative_eq!(reflect(&f), g, epsilon = 1e-10, max_relative = 1e-10);
    }
}

#[test]
fn quadruped_standing_reaction_supports_weight() {
    let p = QuadrupedParams::default();
    let mut x = quadruped::quadruped_initial_state();
    x[7] = 0.0;
    let u = DVector::zeros(4);
    let total: f64 = [Leg::Front, Leg::Back].iter().map(|l| p.ground_reaction(&x, &u, *l).unwrap().y).sum();
    // Knee springs at rest exert no force; compressing the knee pushes up.
    assert_relative_eq!(total, 0.0, epsilon = 1e-12);
    x[4] += 0.05;
    assert!(p.ground_reaction(&x, &u, Leg::Front).unwrap().y > 0.0);
}

#[test]
fn quadruped_initial_guess_touches_front_first() {
    let p = QuadrupedParams::default();
    let task = quadruped_task(&quadruped_weights());
    let u = quadruped_initial_inputs(&p, &task, &PdGuess::default(), &SimOptions::default()).unwrap();
    assert_eq!(u.len(), quadruped::QUADRUPED_STEPS);
    let sys = quadruped_system(&p);
    let traj = simulate(&sys, &task.x0, task.mode0, |i, _| u[i].clone(), 0.0, task.duration, task.steps, &SimOptions::default())
        .unwrap();
    let seq = traj.mode_sequence();
    assert!(seq.len() >= 3, "{seq:?}");
    assert_eq!(seq[1], quadruped::FRONT_STANCE, "{seq:?}");
}

#[test]
fn model_kind_parses() {
    assert_eq!("hopper".parse::<ModelKind>().unwrap(), ModelKind::Hopper);
    assert!("biped".parse::<ModelKind>().is_err());
    assert_eq!(Benchmark::default_for(ModelKind::Quadruped).system.state_dim(), 14);
}
