use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::float;
use crate::error::Error;
use crate::hybrid::{apply_reset, simulate, HybridSystem, SimOptions};
use crate::ilqr::SolveArtifacts;

/// Stream index of one Monte-Carlo trial: covariance index in the high
/// word, trial id in the low word.
pub fn trial_stream(cov_index: usize, trial_id: usize) -> u64 {
    ((cov_index as u64) << 32) | (trial_id as u64 & 0xffff_ffff)
}

/// Draws `δx₀ ~ N(0, σ² I)` from a counter-based stream: the same seed and
/// stream always give the same sample.
pub fn sample_perturbation(sigma2: f64, n: usize, seed: u64, stream: u64) -> DVector<f64> {
    if sigma2 <= 0.0 {
        return DVector::zeros(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let sigma = sigma2.sqrt();
    DVector::from_iterator(
        n,
        (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        }),
    )
}

/// One perturbed closed-loop rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    /// Trajectory label, e.g. `w1-chi`.
    pub traj: String,
    pub cov: f64,
    pub dx0: Vec<f64>,
    /// Final deviation from the nominal; absent when the rollout diverged.
    pub dxf: Option<Vec<f64>>,
    /// Error ratio `‖δx_f‖ / ‖δx₀‖`; `+∞` on divergence.
    #[serde(with = "float")]
    pub e: f64,
    /// Error ratio over the position coordinates only.
    #[serde(with = "float")]
    pub e_position: f64,
    /// Feedback effort `Σ ‖v_i - u_i‖²`; `+∞` on divergence.
    #[serde(with = "float")]
    pub f: f64,
    pub diverged: bool,
    /// Whether the paired trajectory consumed the same `δx₀`.
    pub paired: bool,
    pub failure: Option<String>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Error ratio from stored deviations.
pub fn error_ratio(dx0: &[f64], dxf: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    ratio(norm(dxf), norm(dx0))
}

/// Simulates from `x₀ + δx₀` under `v_i = u_i - K_i (x_i - x̄_i)` with the
/// nominal's time-indexed tracking gains; events are re-detected along the
/// perturbed path.
pub fn tracked_rollout(
    system: &HybridSystem,
    sim: &SimOptions,
    nominal: &SolveArtifacts,
    dx0: &DVector<f64>,
) -> (Option<DVector<f64>>, f64, Option<String>) {
    let traj = &nominal.trajectory;
    let gains = &nominal.tracking_gains.feedback;
    let mut x0 = &traj.states[0] + dx0;
    let mut mode = traj.modes[0];
    let t0 = traj.times[0];
    let tf = *traj.times.last().unwrap_or(&t0);
    let mut resolved = 0;
    let result = loop {
        let run = simulate(
            system,
            &x0,
            mode,
            |i, x| &traj.inputs[i] - &gains[i] * (x - &traj.states[i]),
            t0,
            tf,
            traj.steps(),
            sim,
        );
        // A perturbation can start the system past a guard (a foot below
        // the ground); the transition then happens at t0.
        match run {
            Err(Error::InitialDomain { from, to, .. }) if resolved < sim.max_events_per_step => {
                let reset = system.transition(from, to).and_then(|tr| apply_reset(tr, t0, &x0));
                match reset {
                    Ok(x) => {
                        x0 = x;
                        mode = to;
                        resolved += 1;
                    }
                    Err(e) => break Err(e),
                }
            }
            other => break other,
        }
    };
    match result {
        Ok(run) => {
            let effort = run
                .inputs
                .iter()
                .zip(&traj.inputs)
                .map(|(v, u)| (v - u).norm_squared())
                .sum();
            (Some(run.final_state() - traj.final_state()), effort, None)
        }
        Err(err) => (None, f64::INFINITY, Some(err.to_string())),
    }
}

/// Runs [`tracked_rollout`] and packages the result.
#[allow(clippy::too_many_arguments)]
pub fn trial_record(
    system: &HybridSystem,
    sim: &SimOptions,
    nominal: &SolveArtifacts,
    label: &str,
    trial_id: usize,
    cov: f64,
    dx0: &DVector<f64>,
    paired: bool,
) -> TrialRecord {
    let (dxf, f, failure) = tracked_rollout(system, sim, nominal, dx0);
    let n_pos = dx0.len() / 2;
    let (e, e_position) = match &dxf {
        Some(d) => (
            ratio(d.norm(), dx0.norm()),
            ratio(d.rows(0, n_pos).norm(), dx0.rows(0, n_pos).norm()),
        ),
        None => (f64::INFINITY, f64::INFINITY),
    };
    TrialRecord {
        trial_id,
        traj: label.to_string(),
        cov,
        dx0: dx0.as_slice().to_vec(),
        dxf: dxf.map(|d| d.as_slice().to_vec()),
        e,
        e_position,
        f,
        diverged: failure.is_some(),
        paired,
        failure,
    }
}
