use nalgebra::{DMatrix, DVector};

use super::{linearize_step, FundamentalSolution, StepLinearization};
use crate::error::{Error, Result};
use crate::hybrid::{HybridSystem, ModeId, SimOptions};

/// Relative finite-difference step for derivatives of step factors.
pub const FD_STEP: f64 = 1e-6;

/// Derivative of every factor of one step with respect to a single
/// coordinate of `(x_i, u_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorDerivative {
    /// `(dA_j, dB_j)` per smooth segment.
    pub segments: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// `(dΞ_j, dΞ_u,j)` per event.
    pub saltations: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

fn difference(plus: &StepLinearization, minus: &StepLinearization, width: f64) -> FactorDerivative {
    FactorDerivative {
        segments: plus
            .segments
            .iter()
            .zip(&minus.segments)
            .map(|(p, m)| ((&p.a - &m.a) / width, (&p.b - &m.b) / width))
            .collect(),
        saltations: plus
            .saltations
            .iter()
            .zip(&minus.saltations)
            .map(|(p, m)| ((&p.xi - &m.xi) / width, (&p.xi_u - &m.xi_u) / width))
            .collect(),
    }
}

fn finite(d: &FactorDerivative) -> bool {
    d.segments
        .iter()
        .chain(&d.saltations)
        .all(|(p, q)| p.iter().chain(q.iter()).all(|v| v.is_finite()))
}

/// Central-difference derivatives of the factors of step `step` with
/// respect to each coordinate of `(x_i, u_i)` (states first). The gains
/// do not enter: they are applied when the derivatives are contracted.
///
/// When a perturbation changes the events crossed in the step the
/// difference step is shrunk once, then a one-sided difference on the side
/// that keeps the event sequence is used; if neither side does the step is
/// reported as fragile.
#[allow(clippy::too_many_arguments)]
pub fn factor_derivative_tensors(
    system: &HybridSystem,
    mode: ModeId,
    step: usize,
    t0: f64,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    t1: f64,
    opts: &SimOptions,
    nominal: &StepLinearization,
) -> Result<Vec<FactorDerivative>> {
    let n = x0.len();
    let m = u.len();
    let keys = nominal.event_keys();
    let eval = |z: &DVector<f64>| -> Option<StepLinearization> {
        let x = z.rows(0, n).into_owned();
        let v = z.rows(n, m).into_owned();
        match linearize_step(system, mode, step, t0, &x, &v, t1, opts) {
            Ok((_, lin)) if lin.event_keys() == keys => Some(lin),
            _ => None,
        }
    };
    let mut z0 = DVector::zeros(n + m);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, m).copy_from(u);

    let mut out = Vec::with_capacity(n + m);
    for k in 0..n + m {
        let base = FD_STEP * z0[k].abs().max(1.0);
        let mut found = None;
        for eps in [base, 0.1 * base] {
            let mut zp = z0.clone();
            zp[k] += eps;
            let mut zm = z0.clone();
            zm[k] -= eps;
            // Use the realized perturbation to cancel representation error.
            let width = zp[k] - zm[k];
            let (plus, minus) = (eval(&zp), eval(&zm));
            match (plus, minus) {
                (Some(p), Some(q)) => {
                    found = Some(difference(&p, &q, width));
                    break;
                }
                (p, q) if eps < base => {
                    if let Some(p) = p {
                        found = Some(difference(&p, nominal, zp[k] - z0[k]));
                    } else if let Some(q) = q {
                        found = Some(difference(nominal, &q, z0[k] - zm[k]));
                    }
                }
                _ => {}
            }
        }
        let d = found.ok_or(Error::ModeSequenceFragile { step, coordinate: k })?;
        if !finite(&d) {
            return Err(Error::NonFiniteDifference { step, coordinate: k });
        }
        out.push(d);
    }
    Ok(out)
}

/// Derivative of the closed-loop step matrix split into the part driven by
/// the smooth segments and the part driven by the event maps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDerivative {
    pub flow: DMatrix<f64>,
    pub saltation: DMatrix<f64>,
}

impl StepDerivative {
    pub fn total(&self) -> DMatrix<f64> {
        &self.flow + &self.saltation
    }
}

/// Product rule through the segment/event factorization of one step,
/// holding the gain fixed.
pub fn step_derivative(lin: &StepLinearization, gain: &DMatrix<f64>, d: &FactorDerivative) -> StepDerivative {
    let first = &lin.segments[0];
    let (da0, db0) = &d.segments[0];
    let mut g = &first.a - &first.b * gain;
    let mut flow = da0 - db0 * gain;
    let mut salt = DMatrix::zeros(g.nrows(), g.ncols());
    for (j, seg) in lin.segments.iter().enumerate().skip(1) {
        let s = &lin.saltations[j - 1];
        let (dxi, dxi_u) = &d.saltations[j - 1];
        let (da, db) = &d.segments[j];
        let w = &s.xi * &g - &s.xi_u * gain;
        let carry = &seg.a * &s.xi;
        flow = da * &w - db * gain + &carry * flow;
        salt = &seg.a * (dxi * &g - dxi_u * gain) + &carry * salt;
        g = &seg.a * w - &seg.b * gain;
    }
    StepDerivative {
        flow,
        saltation: salt,
    }
}

/// Gradient of χ with respect to `(x_i, u_i)` with every gain held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiGradient {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Contributions through the smooth segments, per coordinate of `(x, u)`.
    pub flow: DVector<f64>,
    /// Contributions through the event maps, per coordinate of `(x, u)`.
    pub saltation: DVector<f64>,
}

impl ChiGradient {
    pub fn stacked(&self) -> DVector<f64> {
        &self.flow + &self.saltation
    }
}

/// `dχ/dz_k = u_χᵀ P_i (dM_i/dz_k) O_i v_χ` for every coordinate of step `i`.
pub fn chi_gradient(
    fs: &FundamentalSolution,
    i: usize,
    lin: &StepLinearization,
    gain: &DMatrix<f64>,
    tensors: &[FactorDerivative],
) -> ChiGradient {
    let n = lin.a.nrows();
    let a = fs.suffix[i].tr_mul(&fs.u);
    let b = &fs.prefix[i] * &fs.v;
    let mut flow = DVector::zeros(tensors.len());
    let mut salt = DVector::zeros(tensors.len());
    for (k, d) in tensors.iter().enumerate() {
        let dm = step_derivative(lin, gain, d);
        flow[k] = a.dot(&(&dm.flow * &b));
        salt[k] = a.dot(&(&dm.saltation * &b));
    }
    let total = &flow + &salt;
    ChiGradient {
        x: total.rows(0, n).into_owned(),
        u: total.rows(n, tensors.len() - n).into_owned(),
        flow,
        saltation: salt,
    }
}

pub fn chi_state_gradient(
    fs: &FundamentalSolution,
    i: usize,
    lin: &StepLinearization,
    gain: &DMatrix<f64>,
    tensors: &[FactorDerivative],
) -> DVector<f64> {
    chi_gradient(fs, i, lin, gain, tensors).x
}

pub fn chi_input_gradient(
    fs: &FundamentalSolution,
    i: usize,
    lin: &StepLinearization,
    gain: &DMatrix<f64>,
    tensors: &[FactorDerivative],
) -> DVector<f64> {
    chi_gradient(fs, i, lin, gain, tensors).u
}
