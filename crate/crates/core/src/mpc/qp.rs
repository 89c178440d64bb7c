//! Convex QPs `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`, solved by ADMM with a
//! cached factorization and an active-set polishing step.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};

/// Variable layout of the horizon problem: inputs, outputs, then slacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariableLayout {
    pub steps: usize,
    pub outputs: usize,
}

impl VariableLayout {
    pub fn total(&self) -> usize {
        self.steps * (2 + self.outputs)
    }

    pub fn u(&self, k: usize) -> usize {
        k
    }

    pub fn y(&self, k: usize, output: usize) -> usize {
        self.steps + k * self.outputs + output
    }

    pub fn eps(&self, k: usize) -> usize {
        self.steps * (1 + self.outputs) + k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub layout: Option<VariableLayout>,
}

/// Cost weights and input limits of the horizon problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonWeights {
    pub r: f64,
    pub lambda: f64,
    pub u_min: f64,
    pub u_max: f64,
}

/// `Σ (R u_k² + λ ε_{k+1})` subject to the horizon dynamics, softened
/// comfort bounds `y_min − ε ≤ y ≤ y_max + ε`, `ε ≥ 0` and the input box.
/// `bounds[j]` applies to the output after decision `j`; infinite entries
/// disable that side.
pub fn build_qp(dynamics: &AffineDynamics, bounds: &[(f64, f64)], w: &HorizonWeights) -> Result<QpProblem> {
    let n_steps = dynamics.steps();
    if bounds.len() < n_steps {
        return Err(Error::ForecastTooShort {
            needed: n_steps,
            have: bounds.len(),
        });
    }
    if !(w.r >= 0.0) || !(w.lambda > 0.0) || !(w.u_min <= w.u_max) {
        return Err(Error::invalid("need R ≥ 0, λ > 0 and u_min ≤ u_max"));
    }
    let lay = VariableLayout {
        steps: n_steps,
        outputs: 1,
    };
    let n = lay.total();
    let m = 5 * n_steps;
    let mut p = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for k in 0..n_steps {
        p[(lay.u(k), lay.u(k))] = 2.0 * w.r;
        q[lay.eps(k)] = w.lambda;

        let row = k;
        a[(row, lay.y(k, 0))] = 1.0;
        for i in 0..k {
            a[(row, lay.y(i, 0))] = -dynamics.recursion[(k, i)];
        }
        for mm in 0..n_steps {
            a[(row, lay.u(mm))] -= dynamics.input[(k, mm)];
        }
        l[row] = dynamics.constant[k];
        u[row] = dynamics.constant[k];

        let (y_min, y_max) = bounds[k];
        if y_min > y_max {
            return Err(Error::invalid(format!("comfort bounds cross at step {k}")));
        }
        let row = n_steps + 2 * k;
        a[(row, lay.y(k, 0))] = 1.0;
        a[(row, lay.eps(k))] = -1.0;
        l[row] = f64::NEG_INFINITY;
        u[row] = y_max;
        a[(row + 1, lay.y(k, 0))] = 1.0;
        a[(row + 1, lay.eps(k))] = 1.0;
        l[row + 1] = y_min;
        u[row + 1] = f64::INFINITY;

        let row = 3 * n_steps + k;
        a[(row, lay.eps(k))] = 1.0;
        l[row] = 0.0;
        u[row] = f64::INFINITY;

        let row = 4 * n_steps + k;
        a[(row, lay.u(k))] = 1.0;
        l[row] = w.u_min;
        u[row] = w.u_max;
    }
    Ok(QpProblem {
        p,
        q,
        a,
        l,
        u,
        layout: Some(lay),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub adapt_interval: usize,
    pub polish: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            adapt_interval: 25,
            polish: true,
        }
    }
}

impl AdmmSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            eps_abs: tol,
            eps_rel: tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `l ≤ Ax ≤ u`; negative on active lower bounds.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Iterations between early polishing attempts.
const POLISH_INTERVAL: usize = 100;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        if self.p.ncols() != n || self.q.len() != n || self.a.ncols() != n && m > 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.q.len(),
            });
        }
        if self.l.len() != m || self.u.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.l.len(),
            });
        }
        if let Some((i, _)) = self.l.iter().zip(self.u.iter()).enumerate().find(|(_, (l, u))| l > u) {
            return Err(Error::invalid(format!("constraint {i} has l > u")));
        }
        let scale = self.p.amax().max(1.0);
        if (&self.p - self.p.transpose()).amax() > 1e-9 * scale {
            return Err(Error::invalid("cost matrix is not symmetric"));
        }
        if n > 0 {
            let min_eig = self.p.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-9 * scale {
                return Err(Error::NonConvexCost(min_eig));
            }
        }
        Ok(())
    }
}

struct Kkt {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Kkt {
    fn new(qp: &QpProblem, sigma: f64, rho: &DVector<f64>) -> Result<Self> {
        let n = qp.n();
        let mut m = &qp.p + DMatrix::identity(n, n) * sigma;
        if qp.m() > 0 {
            let scaled = DMatrix::from_fn(qp.m(), n, |i, j| qp.a[(i, j)] * rho[i]);
            m += qp.a.transpose() * scaled;
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::NonConvexCost(f64::NAN))?;
        Ok(Self { chol })
    }
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if l == u {
        1e3 * rho
    } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
        1e-6
    } else {
        rho
    }
}

/// ADMM to tolerance `settings.eps_abs`/`eps_rel` on the primal and dual
/// residuals (infinity norm), followed by polishing on the detected active
/// set when that yields a strictly better certified point.
pub fn solve_qp_with(qp: &QpProblem, settings: &AdmmSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.n();
    let m = qp.m();
    let a = &qp.a;
    let at = a.transpose();
    let mut rho_base = settings.rho;
    let rho_vec = |base: f64| DVector::from_fn(m, |i, _| row_rho(qp.l[i], qp.u[i], base));
    let mut rho = rho_vec(rho_base);
    let mut kkt = Kkt::new(qp, settings.sigma, &rho)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let alpha = settings.alpha;
    let mut iterations = 0;
    let mut converged = false;
    let mut r_prim = f64::INFINITY;
    let mut r_dual = f64::INFINITY;

    for k in 1..=settings.max_iter {
        iterations = k;
        let rhs = &x * settings.sigma - &qp.q + &at * (rho.component_mul(&z) - &y);
        let xt = kkt.chol.solve(&rhs);
        let zt = a * &xt;
        x = &xt * alpha + &x * (1.0 - alpha);
        let z_relax = &zt * alpha + &z * (1.0 - alpha);
        let z_new = DVector::from_fn(m, |i, _| (z_relax[i] + y[i] / rho[i]).clamp(qp.l[i], qp.u[i]));
        y += rho.component_mul(&(&z_relax - &z_new));
        z = z_new;

        let ax = a * &x;
        let px = &qp.p * &x;
        let aty = &at * &y;
        r_prim = inf_norm(&(&ax - &z));
        r_dual = inf_norm(&(&px + &qp.q + &aty));
        let eps_prim = settings.eps_abs + settings.eps_rel * inf_norm(&ax).max(inf_norm(&z));
        let eps_dual =
            settings.eps_abs + settings.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&qp.q));
        if r_prim <= eps_prim && r_dual <= eps_dual {
            converged = true;
            break;
        }
        // The slack and output variables carry no curvature, so ADMM can
        // crawl long after the active set has settled. A polished point
        // that passes the KKT check is optimal and ends the solve.
        if settings.polish && k % POLISH_INTERVAL == 0 {
            let probe = QpSolution {
                objective: qp.objective(&x),
                x: x.clone(),
                y: y.clone(),
                iterations: k,
                polished: false,
                primal_residual: r_prim,
                dual_residual: r_dual,
            };
            if let Some(p) = polish(qp, &probe, &z, settings, false) {
                return Ok(p);
            }
        }
        if m > 0 && settings.adapt_interval > 0 && k % settings.adapt_interval == 0 {
            let p_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-30);
            let d_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&qp.q)).max(1e-30);
            let ratio = ((r_prim / p_scale) / (r_dual / d_scale).max(1e-30)).sqrt();
            let new = (rho_base * ratio).clamp(1e-6, 1e6);
            if new > 5.0 * rho_base || new < rho_base / 5.0 {
                rho_base = new;
                rho = rho_vec(rho_base);
                kkt = Kkt::new(qp, settings.sigma, &rho)?;
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterationsExceeded(settings.max_iter));
    }
    let mut sol = QpSolution {
        objective: qp.objective(&x),
        x,
        y,
        iterations,
        polished: false,
        primal_residual: r_prim,
        dual_residual: r_dual,
    };
    if settings.polish {
        if let Some(p) = polish(qp, &sol, &z, settings, true) {
            sol = p;
        }
    }
    Ok(sol)
}

pub fn solve_qp(qp: &QpProblem, tol: f64) -> Result<QpSolution> {
    solve_qp_with(qp, &AdmmSettings::with_tol(tol))
}

/// Solves the equality-constrained problem on the guessed active set and
/// keeps the result only if it is primal and dual feasible, and with
/// `compare` only if it does not lose to the ADMM iterate.
fn polish(qp: &QpProblem, sol: &QpSolution, z: &DVector<f64>, settings: &AdmmSettings, compare: bool) -> Option<QpSolution> {
    let n = qp.n();
    let m = qp.m();
    let mut active = Vec::new();
    for i in 0..m {
        let (l, u) = (qp.l[i], qp.u[i]);
        if l == u {
            active.push((i, l));
        } else if l.is_finite() && z[i] - l < -sol.y[i] {
            active.push((i, l));
        } else if u.is_finite() && u - z[i] < sol.y[i] {
            active.push((i, u));
        }
    }
    let k = active.len();
    let dim = n + k;
    let delta = 1e-9;
    let mut kmat = DMatrix::zeros(dim, dim);
    kmat.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (r, &(i, _)) in active.iter().enumerate() {
        for j in 0..n {
            kmat[(n + r, j)] = qp.a[(i, j)];
            kmat[(j, n + r)] = qp.a[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -qp.q[j];
    }
    for (r, &(_, b)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let mut kreg = kmat.clone();
    for j in 0..n {
        kreg[(j, j)] += delta;
    }
    for r in 0..k {
        kreg[(n + r, n + r)] -= delta;
    }
    let lu = kreg.lu();
    let mut s = lu.solve(&rhs)?;
    for _ in 0..10 {
        let res = &rhs - &kmat * &s;
        if inf_norm(&res) < 1e-14 * inf_norm(&rhs).max(1.0) {
            break;
        }
        s += lu.solve(&res)?;
    }
    if s.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = s.rows(0, n).into_owned();
    let mut y = DVector::zeros(m);
    for (r, &(i, _)) in active.iter().enumerate() {
        y[i] = s[n + r];
    }
    let ax = &qp.a * &x;
    let tol = settings.eps_abs.min(1e-6);
    let primal = (0..m).all(|i| ax[i] >= qp.l[i] - tol && ax[i] <= qp.u[i] + tol);
    let dual = active.iter().all(|&(i, b)| {
        let (l, u) = (qp.l[i], qp.u[i]);
        l == u || (b == l && y[i] <= tol) || (b == u && y[i] >= -tol)
    });
    let r_dual = inf_norm(&(&qp.p * &x + &qp.q + qp.a.transpose() * &y));
    if !(primal && dual && r_dual <= tol) {
        return None;
    }
    let objective = qp.objective(&x);
    // The ADMM iterate is only approximately feasible, so its objective may
    // undercut the true optimum by up to about ‖y‖₁ times its residual.
    let slack = sol.y.iter().map(|v| v.abs()).sum::<f64>() * sol.primal_residual;
    if compare && objective > sol.objective + slack + 1e-6 * sol.objective.abs().max(1.0) {
        return None;
    }
    let r_prim = (0..m)
        .map(|i| (qp.l[i] - ax[i]).max(ax[i] - qp.u[i]).max(0.0))
        .fold(0.0, f64::max);
    Some(QpSolution {
        x,
        y,
        objective,
        iterations: sol.iterations,
        polished: true,
        primal_residual: r_prim,
        dual_residual: r_dual,
    })
}
