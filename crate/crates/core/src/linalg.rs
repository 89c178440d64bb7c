//! Small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).expect("both factors were computed")
}

/// Numerical rank with the same cut-off as [`lstsq`].
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let eps = sv.max() * f64::EPSILON * (a.nrows().max(a.ncols()) as f64) * 1e3;
    sv.iter().filter(|&&s| s > eps).count()
}

/// Ridge-regularized normal equations `(AᵀA + λI) x = Aᵀb`.
pub fn ridge(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = a.ncols();
    let mut g = a.tr_mul(a);
    for i in 0..n {
        g[(i, i)] += lambda;
    }
    let rhs = a.tr_mul(b);
    match g.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => lstsq(&g, &rhs),
    }
}
