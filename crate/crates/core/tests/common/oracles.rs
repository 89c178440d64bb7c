//! Brute-force reference solvers. Shared with the acceptance runner, which
//! includes this file by path.
#![allow(dead_code)]

use bldmpc_core::mpc::QpProblem;
use nalgebra::{DMatrix, DVector};

/// Box-constrained QP `min ½xᵀPx + qᵀx, l ≤ x ≤ u` with identity constraint
/// matrix: tries every assignment of each variable to free, lower or upper
/// bound, solves the stationarity conditions on the free set and keeps the
/// best feasible point. For strictly convex P the optimum is among them.
pub fn box_qp(qp: &QpProblem) -> (DVector<f64>, f64) {
    let n = qp.n();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => x[i] = qp.l[i],
                2 => x[i] = qp.u[i],
                _ => {}
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let pff = DMatrix::from_fn(k, k, |r, s| qp.p[(free[r], free[s])]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = free[r];
                -qp.q[i] - (0..n).filter(|j| state[*j] != 0).map(|j| qp.p[(i, j)] * x[j]).sum::<f64>()
            });
            let xf = pff.cholesky().expect("principal minors of a PD matrix are PD").solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                x[i] = xf[r];
            }
        }
        if (0..n).any(|i| x[i] < qp.l[i] - 1e-12 || x[i] > qp.u[i] + 1e-12) {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().map_or(true, |(_, b)| f < *b) {
            best = Some((x, f));
        }
    }
    best.expect("the box is non-empty")
}

/// NNLS by enumerating supports: least squares on every column subset with
/// full column rank, keeping non-negative solutions. Some optimal solution
/// has linearly independent support columns, so the minimum is exact.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut best = (DVector::zeros(n), 0.5 * b.norm_squared());
    for mask in 1u32..(1 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
        let svd = sub.clone().svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= 1e-10 * smax.max(1.0)) {
            continue;
        }
        let sol = svd.solve(b, 0.0).expect("full column rank");
        if sol.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut theta = DVector::zeros(n);
        for (c, &j) in cols.iter().enumerate() {
            theta[j] = sol[c];
        }
        let f = 0.5 * (a * &theta - b).norm_squared();
        if f < best.1 {
            best = (theta, f);
        }
    }
    best
}

/// Minimizes `f` over the unit cube in three dimensions: a coarse grid, then
/// successively finer local grids around the incumbent down to 1e-6.
pub fn cube_search(f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut best = vec![0.0; 3];
    let mut best_f = f(&best);
    for i in 0..=10 {
        for j in 0..=10 {
            for k in 0..=10 {
                let b = [i as f64 / 10.0, j as f64 / 10.0, k as f64 / 10.0];
                let v = f(&b);
                if v < best_f {
                    best_f = v;
                    best = b.to_vec();
                }
            }
        }
    }
    let mut radius = 0.1;
    while radius > 1e-6 {
        let centre = best.clone();
        let step = radius / 10.0;
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let b: Vec<f64> = [i, j, k]
                        .iter()
                        .zip(&centre)
                        .map(|(d, c)| (c + *d as f64 * step).clamp(0.0, 1.0))
                        .collect();
                    let v = f(&b);
                    if v < best_f {
                        best_f = v;
                        best = b;
                    }
                }
            }
        }
        radius /= 10.0;
    }
    (best, best_f)
}
