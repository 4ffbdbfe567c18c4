//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

/// Central-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = step * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        out.set_column(k, &((fp - fm) / (2.0 * h)));
    }
    out
}

/// `‖a − b‖_F / max(‖b‖_F, floor)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

pub fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.len()).copy_from(p);
        at += p.len();
    }
    out
}
