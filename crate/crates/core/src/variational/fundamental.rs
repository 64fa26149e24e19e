use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative gap between the two largest singular values below which the
/// convergence measure is treated as nonsmooth.
pub const SINGULAR_GAP: f64 = 1e-8;

/// `Φ = M_{N-1} ⋯ M_0` with its top singular triple and the partial
/// products `P_i = M_{N-1} ⋯ M_{i+1}` and `O_i = M_{i-1} ⋯ M_0`, so that
/// `Φ = P_i M_i O_i` for every step.
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalSolution {
    pub phi: DMatrix<f64>,
    pub chi: f64,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Second largest singular value (0 for n = 1).
    pub sigma2: f64,
    pub suffix: Vec<DMatrix<f64>>,
    pub prefix: Vec<DMatrix<f64>>,
}

impl FundamentalSolution {
    pub fn steps(&self) -> usize {
        self.suffix.len()
    }

    /// Whether the top singular value is separated from the next one.
    pub fn is_simple(&self) -> bool {
        self.chi - self.sigma2 > SINGULAR_GAP * self.chi.max(f64::MIN_POSITIVE)
    }
}

fn top_singular(phi: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>, f64) {
    let svd = phi.clone().svd(true, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let top = order[0];
    let sigma2 = order.get(1).map_or(0.0, |&k| sv[k]);
    let u = svd.u.as_ref().expect("left vectors requested").column(top).into_owned();
    let v = svd.v_t.as_ref().expect("right vectors requested").row(top).transpose();
    (sv[top], u, v, sigma2)
}

/// Largest singular value `‖Φ‖₂`.
pub fn convergence_measure(phi: &DMatrix<f64>) -> f64 {
    if phi.is_empty() {
        return 0.0;
    }
    phi.singular_values().max()
}

/// Assembles `Φ` from per-step closed-loop matrices (earliest first).
pub fn fundamental_solution(n: usize, steps: &[DMatrix<f64>]) -> Result<FundamentalSolution> {
    if let Some(bad) = steps.iter().position(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::Dimension(format!("step {bad} matrix is not {n}x{n}")));
    }
    if steps.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite step matrix".into()));
    }
    let count = steps.len();
    let mut prefix = Vec::with_capacity(count);
    let mut acc = DMatrix::identity(n, n);
    for m in steps {
        prefix.push(acc.clone());
        acc = m * acc;
    }
    let phi = acc;
    let mut suffix = vec![DMatrix::identity(n, n); count];
    for i in (0..count.saturating_sub(1)).rev() {
        suffix[i] = &suffix[i + 1] * &steps[i + 1];
    }
    let (chi, u, v, sigma2) = if n == 0 {
        (0.0, DVector::zeros(0), DVector::zeros(0), 0.0)
    } else {
        top_singular(&phi)
    };
    let fs = FundamentalSolution {
        phi,
        chi,
        u,
        v,
        sigma2,
        suffix,
        prefix,
    };
    if n > 1 && !fs.is_simple() {
        log::warn!(
            "repeated top singular value (σ1 = {chi}, σ2 = {sigma2}); χ is nonsmooth here"
        );
    }
    Ok(fs)
}
