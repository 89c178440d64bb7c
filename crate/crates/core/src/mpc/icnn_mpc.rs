//! Horizon problem for an input-convex network. With only upper output
//! bounds the slack-eliminated objective
//! `Σ R b_k² + λ Σ max(0, y_j(b) − y_max,j)` is convex in the duties `b`.
//! It is minimized by projected gradient with the hinge and the network's
//! rectifiers both replaced by softplus of a width that shrinks
//! geometrically. Every stage is then a smooth convex problem; without the
//! network smoothing the iterates stall on rectifier kinks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{horizon_objective, slacks, MpcSolution};
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::icnn::IcnnZoneModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcnnMpcSettings {
    pub r: f64,
    pub lambda: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub allow_nonconvex_lower_bound: bool,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a stage when the objective improved less than this over
    /// `window` iterations.
    pub improvement_tol: f64,
    pub window: usize,
    pub max_iter_per_stage: usize,
}

impl Default for IcnnMpcSettings {
    fn default() -> Self {
        Self {
            r: 1.0,
            lambda: 100.0,
            u_min: 0.0,
            u_max: 1.0,
            allow_nonconvex_lower_bound: false,
            restarts: 5,
            seed: 0,
            improvement_tol: 1e-7,
            window: 50,
            max_iter_per_stage: 2000,
        }
    }
}

const SMOOTHING: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

fn softplus(v: f64, mu: f64) -> (f64, f64) {
    let a = v / mu;
    let value = v.max(0.0) + mu * (-a.abs()).exp().ln_1p();
    let slope = if a >= 0.0 { 1.0 / (1.0 + (-a).exp()) } else { a.exp() / (1.0 + a.exp()) };
    (value, slope)
}

struct Problem<'a> {
    model: &'a IcnnZoneModel,
    frame: &'a FeatureFrame,
    now: usize,
    gains: &'a [f64],
    bounds: Vec<(f64, f64)>,
    s: IcnnMpcSettings,
}

impl Problem<'_> {
    fn steps(&self) -> usize {
        self.bounds.len()
    }

    fn drive(&self, b: &[f64]) -> Vec<f64> {
        b.iter().zip(self.gains).map(|(v, g)| v * g).collect()
    }

    fn outputs(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.model.predict_recursive(self.frame, self.now, self.steps(), Some(&self.drive(b)))
    }

    fn exact(&self, b: &[f64]) -> Result<(f64, Vec<f64>)> {
        let y = self.outputs(b)?;
        let eps = slacks(&y, &self.bounds);
        Ok((horizon_objective(b, &eps, self.s.r, self.s.lambda), y))
    }

    fn smooth_value(&self, b: &[f64], mu: f64) -> Result<f64> {
        let y = self
            .model
            .smoothed_rollout(self.frame, self.now, self.steps(), Some(&self.drive(b)), mu)?;
        let mut j: f64 = b.iter().map(|v| self.s.r * v * v).sum();
        for (v, (lo, hi)) in y.iter().zip(&self.bounds) {
            if hi.is_finite() {
                j += self.s.lambda * softplus(v - hi, mu).0;
            }
            if lo.is_finite() {
                j += self.s.lambda * softplus(lo - v, mu).0;
            }
        }
        Ok(j)
    }

    fn smooth_gradient(&self, b: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
        let n = self.steps();
        let (y, jac) = self
            .model
            .smoothed_rollout_with_jacobian(self.frame, self.now, n, Some(&self.drive(b)), mu)?;
        let mut j: f64 = b.iter().map(|v| self.s.r * v * v).sum();
        let mut g: Vec<f64> = b.iter().map(|v| 2.0 * self.s.r * v).collect();
        for (k, (v, (lo, hi))) in y.iter().zip(&self.bounds).enumerate() {
            let mut w = 0.0;
            if hi.is_finite() {
                let (f, d) = softplus(v - hi, mu);
                j += self.s.lambda * f;
                w += self.s.lambda * d;
            }
            if lo.is_finite() {
                let (f, d) = softplus(lo - v, mu);
                j += self.s.lambda * f;
                w -= self.s.lambda * d;
            }
            if w != 0.0 {
                for m in 0..n {
                    g[m] += w * jac[k][m] * self.gains[m];
                }
            }
        }
        Ok((j, g))
    }

    fn project(&self, b: &mut [f64]) {
        for v in b {
            *v = v.clamp(self.s.u_min, self.s.u_max);
        }
    }

    /// Projected gradient with backtracking on the smoothed objective.
    fn descend(&self, mut b: Vec<f64>, iterations: &mut usize) -> Result<Vec<f64>> {
        for &mu in &SMOOTHING {
            let mut step: f64 = 1.0;
            let mut history: Vec<f64> = Vec::new();
            for _ in 0..self.s.max_iter_per_stage {
                *iterations += 1;
                let (j, g) = self.smooth_gradient(&b, mu)?;
                history.push(j);
                let w = self.s.window;
                if history.len() > w && history[history.len() - 1 - w] - j < self.s.improvement_tol {
                    break;
                }
                step = (step * 2.0).min(1e6);
                let mut moved = false;
                while step > 1e-14 {
                    let mut cand: Vec<f64> = b.iter().zip(&g).map(|(v, d)| v - step * d).collect();
                    self.project(&mut cand);
                    let diff: Vec<f64> = cand.iter().zip(&b).map(|(c, v)| c - v).collect();
                    let sq: f64 = diff.iter().map(|d| d * d).sum();
                    if sq == 0.0 {
                        break;
                    }
                    let lin: f64 = diff.iter().zip(&g).map(|(d, gg)| d * gg).sum();
                    if self.smooth_value(&cand, mu)? <= j + lin + sq / (2.0 * step) {
                        b = cand;
                        moved = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
        }
        Ok(b)
    }
}

/// Minimizes the horizon objective for an ICNN zone model. `bounds[j]`
/// applies to the output after decision `j`; `gains[m]` converts duty into
/// model input units.
pub fn solve_icnn_mpc(
    model: &IcnnZoneModel,
    frame: &FeatureFrame,
    now: usize,
    gains: &[f64],
    bounds: &[(f64, f64)],
    settings: &IcnnMpcSettings,
) -> Result<MpcSolution> {
    let started = std::time::Instant::now();
    let n = bounds.len();
    if gains.len() < n {
        return Err(Error::ForecastTooShort {
            needed: n,
            have: gains.len(),
        });
    }
    if !settings.allow_nonconvex_lower_bound && bounds.iter().any(|b| b.0.is_finite()) {
        return Err(Error::LowerBoundRequested);
    }
    if !(settings.lambda > 0.0 && settings.r >= 0.0 && settings.u_min <= settings.u_max) {
        return Err(Error::invalid("need R ≥ 0, λ > 0 and u_min ≤ u_max"));
    }
    let p = Problem {
        model,
        frame,
        now,
        gains,
        bounds: bounds.to_vec(),
        s: *settings,
    };
    let zero = vec![settings.u_min.max(0.0).min(settings.u_max); n];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(5);
    let mut starts = vec![
        zero.clone(),
        vec![settings.u_max; n],
        vec![0.5 * (settings.u_min + settings.u_max); n],
    ];
    while starts.len() < settings.restarts.max(1) {
        starts.push((0..n).map(|_| rng.gen_range(settings.u_min..=settings.u_max)).collect());
    }
    starts.truncate(settings.restarts.max(1));

    let (mut best_j, mut best_y) = p.exact(&zero)?;
    let mut best_u = zero;
    let mut iterations = 0;
    for s in starts {
        let b = p.descend(s, &mut iterations)?;
        let (j, y) = p.exact(&b)?;
        if j < best_j {
            best_j = j;
            best_y = y;
            best_u = b;
        }
    }
    let eps = slacks(&best_y, bounds);
    Ok(MpcSolution {
        u: best_u,
        y: best_y,
        eps,
        objective: best_j,
        iterations,
        solve_secs: started.elapsed().as_secs_f64(),
    })
}
