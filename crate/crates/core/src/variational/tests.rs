use approx::assert_relative_eq;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::hybrid::{integrate_smooth, simulate, HybridMode, HybridSystem, ModeId, SimOptions, Transition};

const GRAV: f64 = 9.81;

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn lti_mode(a: DMatrix<f64>, b: DMatrix<f64>) -> HybridMode {
    let (n, m) = b.shape();
    HybridMode::new(ModeId(1), n, m, move |_, x, u| &a * x + &b * u)
}

fn lti_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = b.shape();
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * h));
    big.view_mut((0, n), (n, m)).copy_from(&(b * h));
    let e = big.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// Ball under gravity with a vertical thrust input, bouncing with restitution `e`.
fn thrust_ball(e: f64, gravity: f64) -> HybridSystem {
    let fall = HybridMode::new(ModeId(1), 2, 1, move |_, x, u| dvector![x[1], u[0] - gravity])
        .with_jacobian(|_, _, _| (dmatrix![0.0, 1.0; 0.0, 0.0], dmatrix![0.0; 1.0]));
    let bounce = Transition::new(
        ModeId(1),
        ModeId(1),
        |_, x: &DVector<f64>, _| x[0],
        move |_, x: &DVector<f64>| dvector![x[0], -e * x[1]],
    );
    HybridSystem::new(vec![fall], vec![bounce]).unwrap()
}

#[test]
fn zero_field_jacobians() {
    let mode = HybridMode::new(ModeId(1), 3, 2, |_, _, _| DVector::zeros(3));
    let (a, b) =
        discrete_jacobians(&mode, 0.0, &dvector![1.0, 2.0, 3.0], &dvector![0.5, 0.5], 0.1, Tolerances::default())
            .unwrap();
    assert_eq!(a, DMatrix::identity(3, 3));
    assert_eq!(b, DMatrix::zeros(3, 2));
}

#[test]
fn lti_jacobians_match_matrix_exponential() {
    let a = dmatrix![0.0, 1.0, 0.0; -2.0, -0.3, 0.5; 0.1, 0.0, -1.0];
    let b = dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 2.0];
    let mode = lti_mode(a.clone(), b.clone());
    let (ad, bd) =
        discrete_jacobians(&mode, 0.0, &dvector![0.3, -0.1, 1.0], &dvector![0.2, -0.4], 0.1, Tolerances::default())
            .unwrap();
    let (ae, be) = lti_oracle(&a, &b, 0.1);
    assert!(rel_err(&ad, &ae) < 1e-6);
    assert!(rel_err(&bd, &be) < 1e-6);
}

#[test]
fn variational_jacobians_match_step_map_differences() {
    // Nonlinear pendulum with torque input.
    let mode = HybridMode::new(ModeId(1), 2, 1, |_, x, u| dvector![x[1], -GRAV * x[0].sin() - 0.2 * x[1] + u[0]]);
    let tol = Tolerances::default();
    let x = dvector![0.7, -0.4];
    let u = dvector![0.3];
    let h = 0.05;
    let (a, b) = discrete_jacobians(&mode, 0.0, &x, &u, h, tol).unwrap();
    let mut a_fd = DMatrix::zeros(2, 2);
    for k in 0..2 {
        let eps = 1e-6;
        let mut xp = x.clone();
        xp[k] += eps;
        let mut xm = x.clone();
        xm[k] -= eps;
        let d = (integrate_smooth(&mode, 0.0, &xp, &u, h, tol).unwrap()
            - integrate_smooth(&mode, 0.0, &xm, &u, h, tol).unwrap())
            / (2.0 * eps);
        a_fd.set_column(k, &d);
    }
    let eps = 1e-6;
    let b_fd = (integrate_smooth(&mode, 0.0, &x, &dvector![u[0] + eps], h, tol).unwrap()
        - integrate_smooth(&mode, 0.0, &x, &dvector![u[0] - eps], h, tol).unwrap())
        / (2.0 * eps);
    assert!(rel_err(&a, &a_fd) < 1e-6);
    assert!((&b.column(0) - b_fd).norm() < 1e-6 * b.norm());
}

#[test]
fn saltation_is_identity_for_continuous_field() {
    let mode1 = HybridMode::new(ModeId(1), 2, 1, |_, x, _| dvector![x[1], -1.0]);
    let tr = Transition::with_identity_reset(ModeId(1), ModeId(2), |_, x: &DVector<f64>, _| x[0] + 0.3 * x[1]);
    let x = dvector![0.3, -1.0];
    let u = dvector![0.0];
    let f = mode1.field(0.0, &x, &u);
    let s = saltation(&tr, &f, &f, &x, 0.0, &u).unwrap();
    assert!((s.xi - DMatrix::identity(2, 2)).norm() < 1e-9);
    assert_eq!(s.xi_u, DMatrix::zeros(2, 1));
}

#[test]
fn bouncing_ball_saltation_closed_form() {
    for (e, gravity) in [(1.0, 0.0), (1.0, GRAV), (0.6, GRAV)] {
        let sys = thrust_ball(e, gravity);
        let tr = &sys.transitions()[0];
        let v = 3.0;
        let pre = dvector![0.0, -v];
        let post = tr.reset(0.0, &pre);
        let mode = sys.mode(ModeId(1)).unwrap();
        let u = dvector![0.0];
        let s = saltation(tr, &mode.field(0.0, &pre, &u), &mode.field(0.0, &post, &u), &pre, 0.0, &u).unwrap();
        let expected = dmatrix![-e, 0.0; (1.0 + e) * gravity / v, -e];
        assert!((s.xi - expected).norm() < 1e-8, "e = {e}, g = {gravity}");
    }
}

#[test]
fn grazing_is_rejected() {
    let sys = thrust_ball(0.5, GRAV);
    let tr = &sys.transitions()[0];
    let pre = dvector![0.0, 0.0];
    let f = dvector![0.0, -GRAV];
    let err = saltation(tr, &f, &f, &pre, 0.0, &dvector![0.0]).unwrap_err();
    assert!(matches!(err, Error::Grazing { .. }));
}

/// Central differences of the one-step flow map (plain simulation).
fn step_map_fd(
    sys: &HybridSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    eps: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let opts = SimOptions::default();
    let step = |x: &DVector<f64>, u: &DVector<f64>| {
        propagate_step(sys, ModeId(1), 0, 0.0, x, u, h, &opts, false).unwrap().state
    };
    let n = x.len();
    let m = u.len();
    let mut a = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut xp = x.clone();
        xp[k] += eps;
        let mut xm = x.clone();
        xm[k] -= eps;
        a.set_column(k, &((step(&xp, u) - step(&xm, u)) / (2.0 * eps)));
    }
    let mut b = DMatrix::zeros(n, m);
    for k in 0..m {
        let mut up = u.clone();
        up[k] += eps;
        let mut um = u.clone();
        um[k] -= eps;
        b.set_column(k, &((step(x, &up) - step(x, &um)) / (2.0 * eps)));
    }
    (a, b)
}

#[test]
fn event_step_matches_flow_map_oracle() {
    let sys = thrust_ball(0.7, GRAV);
    let x = dvector![0.02, -1.5];
    let u = dvector![1.0];
    let h = 0.05;
    let (prop, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &x, &u, h, &SimOptions::default()).unwrap();
    assert_eq!(prop.events.len(), 1);
    assert_eq!(lin.segments.len(), 2);
    let (a_fd, b_fd) = step_map_fd(&sys, &x, &u, h, 1e-6);
    assert!(rel_err(&lin.a, &a_fd) < 1e-3, "{} vs {}", lin.a, a_fd);
    assert!(rel_err(&lin.b, &b_fd) < 1e-3, "{} vs {}", lin.b, b_fd);
}

#[test]
fn input_dependent_guard_uses_input_saltation() {
    // Guard moves with the input, so the event time depends on u directly.
    let mode = HybridMode::new(ModeId(1), 2, 1, |_, x, u| dvector![x[1], -2.0 + 0.5 * u[0]]);
    let tr = Transition::with_identity_reset(ModeId(1), ModeId(2), |_, x: &DVector<f64>, u: &DVector<f64>| {
        x[0] - 0.1 * u[0]
    });
    let post = HybridMode::new(ModeId(2), 2, 1, |_, x, u| dvector![x[1], 3.0 - x[0] + u[0]]);
    let sys = HybridSystem::new(vec![mode, post], vec![tr]).unwrap();
    let x = dvector![0.05, -1.0];
    let u = dvector![0.2];
    let h = 0.06;
    let opts = SimOptions::default();
    let (_, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &x, &u, h, &opts).unwrap();
    assert_eq!(lin.event_count(), 1);
    assert!(lin.saltations[0].xi_u.norm() > 1e-3);
    let eps = 1e-6;
    let step = |u: f64| propagate_step(&sys, ModeId(1), 0, 0.0, &x, &dvector![u], h, &opts, false).unwrap().state;
    let b_fd = (step(u[0] + eps) - step(u[0] - eps)) / (2.0 * eps);
    assert!((lin.b.column(0) - &b_fd).norm() < 1e-5 * b_fd.norm());
}

#[test]
fn factorization_composes_to_closed_loop() {
    let sys = thrust_ball(0.7, GRAV);
    let x = dvector![0.02, -1.5];
    let u = dvector![1.0];
    let (_, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &x, &u, 0.05, &SimOptions::default()).unwrap();
    let factors = lin.factorization();
    assert_eq!(factors.len(), 3);
    assert!(matches!(factors[1], StepFactor::Saltation { .. }));
    let k = dmatrix![2.0, 0.7];
    let composed = compose_factors(&factors, &k);
    assert!(rel_err(&composed, &lin.closed_loop(&k)) < 1e-12);
}

#[test]
fn event_free_step_has_single_factor() {
    let sys = thrust_ball(0.7, GRAV);
    let (_, lin) =
        linearize_step(&sys, ModeId(1), 0, 0.0, &dvector![1.0, 0.0], &dvector![0.0], 0.05, &SimOptions::default())
            .unwrap();
    let factors = lin.factorization();
    assert_eq!(factors.len(), 1);
    assert_eq!(factors[0], StepFactor::Flow { a: lin.a.clone(), b: lin.b.clone() });
}

#[test]
fn event_on_knot_belongs_to_following_step() {
    // Time guard that reaches zero exactly on the knot t = 0.1: the step
    // ending there sees no crossing, the next one crosses at its start.
    let mode = HybridMode::new(ModeId(1), 1, 1, |_, _, _| dvector![1.0]);
    let tr = Transition::with_identity_reset(ModeId(1), ModeId(2), |t, _, _| 0.1 - t);
    let post = HybridMode::new(ModeId(2), 1, 1, |_, _, _| dvector![2.0]);
    let sys = HybridSystem::new(vec![mode, post], vec![tr]).unwrap();
    let opts = SimOptions::default();
    let (prop, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &dvector![0.0], &dvector![0.0], 0.1, &opts).unwrap();
    assert!(prop.events.is_empty());
    assert_eq!(lin.factorization().len(), 1);
    let (prop, lin) = linearize_step(&sys, ModeId(1), 1, 0.1, &prop.state, &dvector![0.0], 0.2, &opts).unwrap();
    assert_eq!(prop.events.len(), 1);
    assert_eq!(prop.events[0].time, 0.1);
    let factors = lin.factorization();
    assert_eq!(factors.len(), 2);
    assert!(matches!(factors[0], StepFactor::Flow { .. }));
    assert!(matches!(factors[1], StepFactor::Saltation { .. }));
}

#[test]
fn convergence_measure_examples() {
    assert_relative_eq!(convergence_measure(&DMatrix::identity(6, 6)), 1.0, epsilon = 1e-14);
    assert_relative_eq!(convergence_measure(&dmatrix![2.0, 0.0; 0.0, 0.5]), 2.0, epsilon = 1e-14);
}

#[test]
fn convergence_measure_matches_sphere_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let phi = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let chi = convergence_measure(&phi);
    // Brute-force search over random directions, then polish the best
    // sample with power iteration on ΦᵀΦ.
    let mut best = DVector::zeros(6);
    let mut best_val = 0.0;
    for _ in 0..10_000 {
        let v = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).normalize();
        let val = (&phi * &v).norm();
        if val > best_val {
            best_val = val;
            best = v;
        }
    }
    assert!(best_val <= chi * (1.0 + 1e-12));
    let gram = phi.transpose() * &phi;
    for _ in 0..200 {
        best = (&gram * &best).normalize();
    }
    assert_relative_eq!((&phi * &best).norm(), chi, max_relative = 1e-3);
}

#[test]
fn empty_product_is_identity() {
    let fs = fundamental_solution(6, &[]).unwrap();
    assert_eq!(fs.phi, DMatrix::identity(6, 6));
    assert_relative_eq!(fs.chi, 1.0, epsilon = 1e-14);
}

#[test]
fn svd_and_partial_product_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps: Vec<DMatrix<f64>> =
        (0..8).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.8..0.8))).collect();
    let fs = fundamental_solution(4, &steps).unwrap();
    assert_relative_eq!(fs.u.norm(), 1.0, epsilon = 1e-12);
    assert_relative_eq!(fs.v.norm(), 1.0, epsilon = 1e-12);
    assert!((&fs.phi * &fs.v - &fs.u * fs.chi).norm() <= 1e-10 * fs.chi);
    assert!(fs.chi >= fs.sigma2);
    for i in 0..steps.len() {
        let assembled = &fs.suffix[i] * &steps[i] * &fs.prefix[i];
        assert!(rel_err(&assembled, &fs.phi) < 1e-10);
        if i > 0 {
            assert!(rel_err(&fs.suffix[i - 1], &(&fs.suffix[i] * &steps[i])) < 1e-12);
            assert!(rel_err(&fs.prefix[i], &(&steps[i - 1] * &fs.prefix[i - 1])) < 1e-12);
        }
    }
    assert_eq!(fs.prefix[0], DMatrix::identity(4, 4));
    assert_eq!(fs.suffix[7], DMatrix::identity(4, 4));
}

#[test]
fn lti_fundamental_solution_is_matrix_exponential() {
    let a = dmatrix![0.0, 1.0; -4.0, -0.5];
    let b = dmatrix![0.0; 1.0];
    let sys = HybridSystem::new(vec![lti_mode(a.clone(), b)], vec![]).unwrap();
    let opts = SimOptions::default();
    let traj = simulate(&sys, &dvector![1.0, 0.0], ModeId(1), |_, _| dvector![0.0], 0.0, 2.0, 20, &opts).unwrap();
    let lins = linearize_trajectory(&sys, &traj, &opts).unwrap();
    let gains = vec![DMatrix::zeros(1, 2); 20];
    let ms = closed_loop_matrices(&lins, &gains).unwrap();
    let fs = fundamental_solution(2, &ms).unwrap();
    assert!(rel_err(&fs.phi, &(a * 2.0).exp()) < 1e-5);
}

#[test]
fn step_derivative_of_quadratic_field() {
    // x' = x^2: A = 1/(1 - x h)^2, dA/dx = 2h/(1 - x h)^3.
    let mode = HybridMode::new(ModeId(1), 1, 1, |_, x, _| dvector![x[0] * x[0]]);
    let sys = HybridSystem::new(vec![mode], vec![]).unwrap();
    let opts = SimOptions::default();
    let (x, h) = (0.4, 0.05);
    let (_, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &dvector![x], &dvector![0.0], h, &opts).unwrap();
    assert_relative_eq!(lin.a[(0, 0)], 1.0 / (1.0 - x * h).powi(2), max_relative = 1e-8);
    let tensors =
        factor_derivative_tensors(&sys, ModeId(1), 0, 0.0, &dvector![x], &dvector![0.0], h, &opts, &lin).unwrap();
    let d = step_derivative(&lin, &dmatrix![0.0], &tensors[0]);
    assert_relative_eq!(d.flow[(0, 0)], 2.0 * h / (1.0 - x * h).powi(3), max_relative = 1e-6);
    assert_eq!(d.saltation, dmatrix![0.0]);
    assert_eq!(tensors[1].segments[0].0, dmatrix![0.0]);
}

#[test]
fn lti_has_zero_chi_gradient() {
    let a = dmatrix![0.0, 1.0; -1.0, -0.1];
    let b = dmatrix![0.0; 1.0];
    let sys = HybridSystem::new(vec![lti_mode(a, b)], vec![]).unwrap();
    let opts = SimOptions::default();
    let traj = simulate(&sys, &dvector![1.0, 0.5], ModeId(1), |_, _| dvector![0.3], 0.0, 0.5, 5, &opts).unwrap();
    let lins = linearize_trajectory(&sys, &traj, &opts).unwrap();
    let gains = vec![dmatrix![0.5, 0.2]; 5];
    let fs = fundamental_solution(2, &closed_loop_matrices(&lins, &gains).unwrap()).unwrap();
    for i in 0..5 {
        let t = factor_derivative_tensors(
            &sys, ModeId(1), i, traj.times[i], &traj.states[i], &traj.inputs[i], traj.times[i + 1], &opts, &lins[i],
        )
        .unwrap();
        let g = chi_gradient(&fs, i, &lins[i], &gains[i], &t);
        // Nonzero only through the integrator's state-dependent step sizes.
        assert!(g.x.norm() < 1e-6 && g.u.norm() < 1e-6, "{g:?}");
    }
}

#[test]
fn scalar_chi_gradient_is_exact() {
    // Φ = a(x_0) b with a the step Jacobian of x' = -x^3 and b a fixed LTI step.
    let mode = HybridMode::new(ModeId(1), 1, 1, |_, x, u| dvector![-x[0].powi(3) + u[0]]);
    let sys = HybridSystem::new(vec![mode], vec![]).unwrap();
    let opts = SimOptions::default();
    let h = 0.02;
    let x0 = 0.8;
    let (_, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &dvector![x0], &dvector![0.0], h, &opts).unwrap();
    let b = 0.7;
    let fs = fundamental_solution(1, &[lin.a.clone(), dmatrix![b]]).unwrap();
    let tensors = factor_derivative_tensors(&sys, ModeId(1), 0, 0.0, &dvector![x0], &dvector![0.0], h, &opts, &lin)
        .unwrap();
    let g = chi_state_gradient(&fs, 0, &lin, &dmatrix![0.0], &tensors);
    // Closed form of the flow: x(h) = x0 / sqrt(1 + 2 x0^2 h); A = (1 + 2 x0^2 h)^(-3/2).
    let s = 1.0 + 2.0 * x0 * x0 * h;
    let da = -1.5 * s.powf(-2.5) * 4.0 * x0 * h;
    assert_relative_eq!(g[0], b * da, max_relative = 1e-6);
}

#[test]
fn input_in_post_mode_only_affects_flow_term() {
    let pre = HybridMode::new(ModeId(1), 2, 1, |_, _, _| dvector![-1.0, 0.0]);
    let post = HybridMode::new(ModeId(2), 2, 1, |_, x, u| dvector![-1.0, u[0] * x[0] - x[1]]);
    let tr = Transition::with_identity_reset(ModeId(1), ModeId(2), |_, x: &DVector<f64>, _| x[0]);
    let sys = HybridSystem::new(vec![pre, post], vec![tr]).unwrap();
    let opts = SimOptions::default();
    let (x, u) = (dvector![0.02, 0.3], dvector![1.5]);
    let (_, lin) = linearize_step(&sys, ModeId(1), 0, 0.0, &x, &u, 0.05, &opts).unwrap();
    assert_eq!(lin.event_count(), 1);
    let fs = fundamental_solution(2, &[lin.a.clone()]).unwrap();
    let tensors = factor_derivative_tensors(&sys, ModeId(1), 0, 0.0, &x, &u, 0.05, &opts, &lin).unwrap();
    let g = chi_gradient(&fs, 0, &lin, &DMatrix::zeros(1, 2), &tensors);
    assert!(g.saltation[2].abs() < 1e-9, "{g:?}");
    assert!(g.flow[2].abs() > 1e-4);
}

/// Ball with thrust under a feedback gain over several bounces; the chi
/// gradient must match finite differences of χ recomputed from re-linearized
/// steps.
#[test]
fn chi_gradient_matches_finite_differences_across_events() {
    let sys = thrust_ball(0.8, GRAV);
    let opts = SimOptions::default();
    let n_steps = 12;
    let traj = simulate(
        &sys,
        &dvector![0.3, 0.0],
        ModeId(1),
        |i, _| dvector![0.5 + 0.1 * i as f64],
        0.0,
        0.6,
        n_steps,
        &opts,
    )
    .unwrap();
    assert!(!traj.events.is_empty());
    let lins = linearize_trajectory(&sys, &traj, &opts).unwrap();
    let gains: Vec<DMatrix<f64>> = (0..n_steps).map(|i| dmatrix![3.0 + 0.2 * i as f64, 0.8]).collect();
    let ms = closed_loop_matrices(&lins, &gains).unwrap();
    let fs = fundamental_solution(2, &ms).unwrap();
    let chi_with = |i: usize, x: &DVector<f64>, u: &DVector<f64>| {
        let (_, lin) = linearize_step(&sys, traj.modes[i], i, traj.times[i], x, u, traj.times[i + 1], &opts).unwrap();
        let mut ms = ms.clone();
        ms[i] = lin.closed_loop(&gains[i]);
        convergence_measure(&fundamental_solution(2, &ms).unwrap().phi)
    };
    for i in 0..n_steps {
        let (x, u) = (&traj.states[i], &traj.inputs[i]);
        let tensors = factor_derivative_tensors(
            &sys, traj.modes[i], i, traj.times[i], x, u, traj.times[i + 1], &opts, &lins[i],
        )
        .unwrap();
        let g = chi_gradient(&fs, i, &lins[i], &gains[i], &tensors);
        let stacked = g.stacked();
        let mut fd = DVector::zeros(3);
        for k in 0..3 {
            let eps = 1e-6;
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            if k < 2 {
                xp[k] += eps;
                xm[k] -= eps;
            } else {
                up[0] += eps;
                um[0] -= eps;
            }
            fd[k] = (chi_with(i, &xp, &up) - chi_with(i, &xm, &um)) / (2.0 * eps);
        }
        // Ballistic steps have step matrices independent of (x, u).
        let err = (&stacked - &fd).norm() / fd.norm().max(1e-6 * fs.chi);
        assert!(err < 1e-4, "step {i}: {stacked} vs {fd}");
        // Product-rule split sums to the direct derivative of the step matrix.
        for (k, d) in tensors.iter().enumerate() {
            let sd = step_derivative(&lins[i], &gains[i], d);
            let direct = {
                let eps = 1e-6;
                let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
                if k < 2 {
                    xp[k] += eps;
                    xm[k] -= eps;
                } else {
                    up[0] += eps;
                    um[0] -= eps;
                }
                let lin = |x: &DVector<f64>, u: &DVector<f64>| {
                    linearize_step(&sys, traj.modes[i], i, traj.times[i], x, u, traj.times[i + 1], &opts)
                        .unwrap()
                        .1
                        .closed_loop(&gains[i])
                };
                (lin(&xp, &up) - lin(&xm, &um)) / (2.0 * eps)
            };
            assert!(
                (sd.total() - &direct).norm() <= 1e-5 * direct.norm().max(1.0),
                "step {i} coord {k}"
            );
        }
    }
}
