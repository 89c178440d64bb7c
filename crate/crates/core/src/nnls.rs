//! Lawson–Hanson active-set non-negative least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnlsOptions {
    /// Outer-iteration cap as a multiple of the column count.
    pub max_iter_factor: usize,
    /// Scale columns to unit root-mean-square before solving.
    pub scale_columns: bool,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            max_iter_factor: 10,
            scale_columns: true,
        }
    }
}

/// `argmin ‖Aθ − b‖₂` subject to `θ ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    nnls_with(a, b, NnlsOptions::default())
}

pub fn nnls_with(a: &DMatrix<f64>, b: &DVector<f64>, opts: NnlsOptions) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let rms = a.column(j).norm() / (m.max(1) as f64).sqrt();
            if opts.scale_columns && rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    // a thin QR turns a tall problem into an equivalent n×n one
    let (r, rhs) = if m > n {
        let qr = scaled.qr();
        let rhs = qr.q().transpose() * b;
        (qr.r(), rhs)
    } else {
        (scaled, b.clone())
    };
    let mut theta = lawson_hanson(&r, &rhs, opts.max_iter_factor * n)?;
    for (t, s) in theta.iter_mut().zip(&scales) {
        *t /= s;
    }
    Ok(theta)
}

fn lawson_hanson(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> Result<DVector<f64>> {
    let n = a.ncols();
    let tol = 10.0 * f64::EPSILON * a.lp_norm(1).max(1.0) * (a.nrows().max(n) as f64) * b.norm().max(1.0);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut w = a.tr_mul(&(b - a * &x));
    // columns whose entry would start non-positive; retried after x moves
    let mut rejected = vec![false; n];
    let mut iter = 0;

    loop {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !rejected[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)))
            .filter(|&j| w[j] > tol);
        let Some(j) = candidate else { break };
        if iter >= max_iter {
            return Err(Error::MaxIterationsExceeded(max_iter));
        }
        passive[j] = true;
        // A positive gradient entry guarantees a positive new coefficient in
        // exact arithmetic only; near-dependent columns can round it away.
        let first = solve_passive(a, b, &passive);
        if first[j] <= 0.0 {
            passive[j] = false;
            rejected[j] = true;
            continue;
        }
        iter += 1;
        rejected.fill(false);

        let mut s = first;
        loop {
            let blocked: Vec<usize> = (0..n).filter(|&i| passive[i] && s[i] <= 0.0).collect();
            if blocked.is_empty() {
                x = s;
                break;
            }
            let (hit, alpha) = blocked
                .iter()
                .map(|&i| (i, x[i] / (x[i] - s[i])))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .expect("blocked is non-empty");
            for i in 0..n {
                if passive[i] {
                    x[i] += alpha * (s[i] - x[i]);
                }
            }
            // the limiting index leaves exactly; others only if rounding put them at zero
            x[hit] = 0.0;
            for i in 0..n {
                if passive[i] && x[i] <= tol * 1e-3 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
            s = solve_passive(a, b, &passive);
        }
        w = a.tr_mul(&(b - a * &x));
    }
    Ok(x)
}

/// Unconstrained least squares restricted to the passive columns; the
/// minimum-norm solution is taken when those columns are rank deficient.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let sol = crate::linalg::lstsq(&sub, b);
    let mut s = DVector::zeros(passive.len());
    for (k, &j) in cols.iter().enumerate() {
        s[j] = sol[k];
    }
    s
}

/// Largest violation of the NNLS optimality conditions for `theta`.
pub fn kkt_residual(a: &DMatrix<f64>, b: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let grad = a.tr_mul(&(a * theta - b));
    theta
        .iter()
        .zip(grad.iter())
        .map(|(&t, &g)| {
            if t > 0.0 {
                g.abs()
            } else {
                (-g).max(0.0).max(-t)
            }
        })
        .fold(0.0, f64::max)
}
