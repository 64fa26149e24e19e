use nalgebra::{DMatrix, DVector};

use super::{CostWeights, GainSchedule};
use crate::error::{Error, Result};
use crate::hybrid::HybridTrajectory;
use crate::variational::StepLinearization;

pub(crate) const REG_MIN: f64 = 1e-6;
pub(crate) const REG_MAX: f64 = 1e6;
pub(crate) const REG_FACTOR: f64 = 10.0;

/// Extra first- and second-order stage terms from the χ objective, already
/// multiplied by `Q_χ`. Each entry is over the stacked `(x_i, u_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiExpansion {
    pub gradient: Vec<DVector<f64>>,
    pub hessian: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub gains: GainSchedule,
    /// Regularization that made every `Q_uu` positive definite.
    pub regularization: f64,
    /// First-order predicted decrease `-Σ k_iᵀ Q_u,i` for a full step.
    pub expected_decrease: f64,
    /// Value function gradients `V_x,i`, `i = 0..=N`.
    pub value_gradients: Vec<DVector<f64>>,
    /// Value function Hessians `V_xx,i`, `i = 0..=N`.
    pub value_hessians: Vec<DMatrix<f64>>,
    /// Largest diagonal entry of the unregularized `Q_uu` over the horizon.
    pub quu_scale: f64,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn sweep(
    traj: &HybridTrajectory,
    lins: &[StepLinearization],
    w: &CostWeights,
    chi: Option<&ChiExpansion>,
    rho: f64,
) -> std::result::Result<BackwardResult, usize> {
    let n_steps = traj.steps();
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let mut vx = DVector::zeros(n);
    let mut vxx = DMatrix::zeros(n, n);
    let x_n = traj.final_state() - &w.x_goal;
    vx.copy_from(&(&w.q_n * x_n * 2.0));
    vxx.copy_from(&(&w.q_n * 2.0));
    let mut value_gradients = vec![DVector::zeros(n); n_steps + 1];
    let mut value_hessians = vec![DMatrix::zeros(n, n); n_steps + 1];
    value_gradients[n_steps] = vx.clone();
    value_hessians[n_steps] = symmetrize(&vxx);
    let mut feedforward = vec![DVector::zeros(m); n_steps];
    let mut feedback = vec![DMatrix::zeros(m, n); n_steps];
    let mut expected = 0.0;
    let mut quu_scale = 0.0_f64;

    for i in (0..n_steps).rev() {
        let a = &lins[i].a;
        let b = &lins[i].b;
        let x = &traj.states[i];
        let u = &traj.inputs[i];
        let r = w.r_for(traj.modes[i]);
        let dx = match w.stage_ref(i) {
            Some(reference) => x - reference,
            None => x.clone(),
        };
        let mut qx = &w.q * dx * 2.0 + a.tr_mul(&vx);
        let mut qu = r * u * 2.0 + b.tr_mul(&vx);
        let vxx_a = &vxx * a;
        let vxx_b = &vxx * b;
        let mut qxx = &w.q * 2.0 + a.tr_mul(&vxx_a);
        let mut quu = r * 2.0 + b.tr_mul(&vxx_b);
        let mut qux = b.tr_mul(&vxx_a);
        if let Some(c) = chi {
            let g = &c.gradient[i];
            let h = &c.hessian[i];
            qx += g.rows(0, n);
            qu += g.rows(n, m);
            qxx += h.view((0, 0), (n, n));
            quu += h.view((n, n), (m, m));
            qux += h.view((n, 0), (m, n));
        }
        let quu = symmetrize(&quu);
        quu_scale = quu.diagonal().iter().fold(quu_scale, |acc, v| acc.max(*v));
        let reg = &quu + DMatrix::identity(m, m) * rho;
        let chol = reg.cholesky().ok_or(i)?;
        let k = -chol.solve(&qu);
        let gain = chol.solve(&qux);
        // δu = k - K δx
        let kt_quu = gain.tr_mul(&quu);
        vx = &qx - gain.tr_mul(&qu) - &kt_quu * &k + qux.tr_mul(&k);
        vxx = symmetrize(&(&qxx + &kt_quu * &gain - gain.tr_mul(&qux) - qux.tr_mul(&gain)));
        expected -= k.dot(&qu);
        value_gradients[i] = vx.clone();
        value_hessians[i] = vxx.clone();
        feedforward[i] = k;
        feedback[i] = gain;
    }
    Ok(BackwardResult {
        gains: GainSchedule { feedforward, feedback },
        regularization: rho,
        expected_decrease: expected,
        value_gradients,
        value_hessians,
        quu_scale,
    })
}

/// Riccati backward pass over the full-step linearizations (which contain
/// the saltation matrices of events inside each step). The regularization
/// `ρ I` on `Q_uu` starts at `rho` and escalates ×10 from 1e-6 to 1e6 on
/// factorization failure.
pub fn backward_pass(
    traj: &HybridTrajectory,
    lins: &[StepLinearization],
    w: &CostWeights,
    chi: Option<&ChiExpansion>,
    rho: f64,
) -> Result<BackwardResult> {
    if lins.len() != traj.steps() {
        return Err(Error::Dimension(format!(
            "{} linearizations for {} steps",
            lins.len(),
            traj.steps()
        )));
    }
    let mut rho = rho;
    loop {
        match sweep(traj, lins, w, chi, rho) {
            Ok(out) => return Ok(out),
            Err(step) => {
                rho = (rho * REG_FACTOR).max(REG_MIN);
                if rho > REG_MAX {
                    return Err(Error::BackwardPass { step });
                }
                log::debug!("Q_uu not positive definite at step {step}; regularization -> {rho:e}");
            }
        }
    }
}
