use nalgebra::{DMatrix, DVector};

/// BFGS update of a Hessian approximation,
/// `H+ = H - H s sᵀ H / (sᵀ H s) + y yᵀ / (yᵀ s)`.
/// The update is skipped when the curvature condition
/// `sᵀ y > 1e-10 ‖s‖ ‖y‖` fails.
pub fn bfgs_update(h: &DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
    let sy = s.dot(y);
    if !(sy > 1e-10 * s.norm() * y.norm()) {
        return h.clone();
    }
    let hs = h * s;
    let shs = s.dot(&hs);
    if !(shs > 0.0) {
        return h.clone();
    }
    let mut out = h - &hs * hs.transpose() / shs + y * y.transpose() / sy;
    // Keep exact symmetry against round-off.
    let sym = (&out + out.transpose()) * 0.5;
    out.copy_from(&sym);
    out
}
