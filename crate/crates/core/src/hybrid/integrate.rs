//! Adaptive Dormand–Prince 5(4) integration with step control restricted to a
//! leading block of "controlled" components, so that variational quantities
//! carried alongside the state never change the accepted step sequence.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::HybridMode;
use crate::error::{Error, Result};

/// Local error tolerances of the adaptive integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rel: 1e-9,
            abs: 1e-11,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_SUBSTEPS: usize = 200_000;

fn combine(y: &DVector<f64>, h: f64, terms: &[(f64, &DVector<f64>)]) -> DVector<f64> {
    let mut out = y.clone();
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// One explicit Dormand–Prince step of size `h`. Returns the fifth-order
/// solution and the embedded error estimate.
pub(crate) fn rk_step<F>(rhs: &mut F, t: f64, y: &DVector<f64>, h: f64) -> (DVector<f64>, DVector<f64>)
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + C2 * h, &combine(y, h, &[(A21, &k1)]));
    let k3 = rhs(t + C3 * h, &combine(y, h, &[(A31, &k1), (A32, &k2)]));
    let k4 = rhs(t + C4 * h, &combine(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
    let k5 = rhs(
        t + C5 * h,
        &combine(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
    );
    let k6 = rhs(
        t + h,
        &combine(y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
    );
    let y_new = combine(y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = rhs(t + h, &y_new);
    let zero = DVector::zeros(y.len());
    let err = combine(
        &zero,
        h,
        &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)],
    );
    (y_new, err)
}

fn error_norm(
    err: &DVector<f64>,
    y: &DVector<f64>,
    y_new: &DVector<f64>,
    controlled: usize,
    tol: Tolerances,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..controlled {
        let scale = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
        acc += (err[i] / scale).powi(2);
    }
    (acc / controlled.max(1) as f64).sqrt()
}

/// Outcome of one accepted adaptive step.
pub(crate) struct Accepted {
    pub t: f64,
    pub y: DVector<f64>,
    /// Suggested size of the next step.
    pub h_next: f64,
}

/// Takes one accepted adaptive step from `(t, y)` toward `t_end`, starting
/// from the trial size `h`. Only the first `controlled` components enter the
/// error norm. `mode` is used for diagnostics.
pub(crate) fn adaptive_step<F>(
    rhs: &mut F,
    t: f64,
    y: &DVector<f64>,
    t_end: f64,
    h: f64,
    controlled: usize,
    tol: Tolerances,
    mode: &HybridMode,
) -> Result<Accepted>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let span = t_end - t;
    let mut h = h.min(span);
    let h_min = 1e-14 * t.abs().max(1.0);
    loop {
        // Avoid leaving a sliver that would force a tiny final step.
        let last = h >= span * (1.0 - 1e-10);
        let h_try = if last { span } else { h };
        let (y_new, err) = rk_step(rhs, t, y, h_try);
        let norm = error_norm(&err, y, &y_new, controlled, tol);
        if !norm.is_finite() {
            if h_try <= h_min {
                return Err(Error::IntegrationDiverged { mode: mode.id, time: t });
            }
            h = h_try * MIN_FACTOR;
            continue;
        }
        let factor = if norm == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        if norm <= 1.0 {
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged { mode: mode.id, time: t + h_try });
            }
            let t_new = if last { t_end } else { t + h_try };
            return Ok(Accepted {
                t: t_new,
                y: y_new,
                h_next: h_try * factor,
            });
        }
        if h_try <= h_min {
            return Err(Error::StepSizeUnderflow { mode: mode.id, time: t });
        }
        h = h_try * factor;
    }
}

/// Integrates `rhs` adaptively from `t0` to `t1`, returning the final value.
pub(crate) fn integrate_adaptive<F>(
    rhs: &mut F,
    t0: f64,
    y0: &DVector<f64>,
    t1: f64,
    controlled: usize,
    tol: Tolerances,
    mode: &HybridMode,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let mut t = t0;
    let mut y = y0.clone();
    if t1 == t0 {
        return Ok(y);
    }
    let backward = t1 < t0;
    let mut h = (t1 - t0).abs();
    for _ in 0..MAX_SUBSTEPS {
        let accepted = if backward {
            // Integrate the time-reversed system s = -t.
            let mut reversed = |s: f64, z: &DVector<f64>| -rhs(-s, z);
            let step = adaptive_step(&mut reversed, -t, &y, -t1, h, controlled, tol, mode)?;
            Accepted {
                t: -step.t,
                y: step.y,
                h_next: step.h_next,
            }
        } else {
            adaptive_step(rhs, t, &y, t1, h, controlled, tol, mode)?
        };
        t = accepted.t;
        y = accepted.y;
        h = accepted.h_next;
        if t == t1 {
            return Ok(y);
        }
    }
    Err(Error::StepSizeUnderflow { mode: mode.id, time: t })
}

/// Flow of a single mode over `[t, t + h]` with the input held constant.
/// A negative `h` integrates backward in time.
pub fn integrate_smooth(
    mode: &HybridMode,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    tol: Tolerances,
) -> Result<DVector<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationDiverged { mode: mode.id, time: t });
    }
    let mut rhs = |s: f64, y: &DVector<f64>| mode.field(s, y, u);
    integrate_adaptive(&mut rhs, t, x, t + h, x.len(), tol, mode)
}
