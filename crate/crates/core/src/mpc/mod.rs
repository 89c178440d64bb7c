//! Receding-horizon control: horizon QPs for the linear model families,
//! a projected-gradient solver for input-convex networks, PWM and the
//! closed loop against the plant simulator.

pub mod closed_loop;
pub mod icnn_mpc;
pub mod pwm;
pub mod qp;

pub use closed_loop::{closed_loop, ClosedLoopRun, ClosedLoopSummary, Controller, ForecastError, MpcPolicy, StepRecord};
pub use icnn_mpc::{solve_icnn_mpc, IcnnMpcSettings};
pub use pwm::{pulses, pwm};
pub use qp::{build_qp, solve_qp, solve_qp_with, AdmmSettings, HorizonWeights, QpProblem, QpSolution, VariableLayout};

use serde::{Deserialize, Serialize};

use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};
use crate::plant::Mode;

/// Comfort bounds from `from_hour` (hours after midnight in the log's time
/// base) until the next segment. `None` leaves that side unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComfortSegment {
    pub from_hour: f64,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
}

/// Daily step function of comfort bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComfortSchedule {
    pub segments: Vec<ComfortSegment>,
}

impl ComfortSchedule {
    pub fn constant(y_min: f64, y_max: f64) -> Self {
        Self {
            segments: vec![ComfortSegment {
                from_hour: 0.0,
                y_min: Some(y_min),
                y_max: Some(y_max),
            }],
        }
    }

    /// Tight at night, relaxed during the day.
    pub fn heating_default() -> Self {
        Self {
            segments: vec![
                ComfortSegment {
                    from_hour: 0.0,
                    y_min: Some(21.0),
                    y_max: Some(25.0),
                },
                ComfortSegment {
                    from_hour: 8.0,
                    y_min: Some(20.0),
                    y_max: Some(26.0),
                },
                ComfortSegment {
                    from_hour: 17.0,
                    y_min: Some(21.0),
                    y_max: Some(25.0),
                },
            ],
        }
    }

    /// Upper bound lowered from 22:00 until morning.
    pub fn cooling_default() -> Self {
        Self {
            segments: vec![
                ComfortSegment {
                    from_hour: 0.0,
                    y_min: Some(21.0),
                    y_max: Some(25.0),
                },
                ComfortSegment {
                    from_hour: 8.0,
                    y_min: Some(20.0),
                    y_max: Some(26.0),
                },
                ComfortSegment {
                    from_hour: 22.0,
                    y_min: Some(21.0),
                    y_max: Some(25.0),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.segments.first().ok_or_else(|| Error::invalid("comfort schedule is empty"))?;
        if first.from_hour != 0.0 {
            return Err(Error::invalid("comfort schedule must start at hour 0"));
        }
        for (i, w) in self.segments.iter().enumerate() {
            if !(0.0..24.0).contains(&w.from_hour) {
                return Err(Error::invalid(format!("comfort.segments[{i}].from_hour outside [0, 24)")));
            }
            if i > 0 && w.from_hour <= self.segments[i - 1].from_hour {
                return Err(Error::invalid(format!("comfort.segments[{i}] is not in increasing hour order")));
            }
            if let (Some(lo), Some(hi)) = (w.y_min, w.y_max) {
                if lo > hi {
                    return Err(Error::invalid(format!("comfort.segments[{i}] has y_min > y_max")));
                }
            }
        }
        Ok(())
    }

    /// `(y_min, y_max)` at `tod` seconds after midnight, with infinities for
    /// unbounded sides.
    pub fn at(&self, tod: f64) -> (f64, f64) {
        let hour = tod.rem_euclid(86_400.0) / 3600.0;
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.from_hour <= hour)
            .or(self.segments.first())
            .expect("validated schedule is non-empty");
        (seg.y_min.unwrap_or(f64::NEG_INFINITY), seg.y_max.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Horizon length in control steps.
    pub horizon: usize,
    pub r: f64,
    pub lambda: f64,
    /// Control step, s.
    pub control_step: i64,
    pub comfort: ComfortSchedule,
    /// Bounds are tightened by this much inside the optimization; comfort is
    /// still judged against the schedule itself.
    pub margin: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub mode: Mode,
    pub tol: f64,
    pub max_iter: usize,
    /// Keep lower output bounds in ICNN problems, giving up the convexity
    /// guarantee.
    pub allow_nonconvex_lower_bound: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 14,
            r: 1.0,
            lambda: 100.0,
            control_step: 1800,
            comfort: ComfortSchedule::heating_default(),
            margin: 0.0,
            u_min: 0.0,
            u_max: 1.0,
            mode: Mode::Heating,
            tol: 1e-6,
            max_iter: 20_000,
            allow_nonconvex_lower_bound: false,
        }
    }
}

impl MpcConfig {
    pub fn cooling() -> Self {
        Self {
            comfort: ComfortSchedule::cooling_default(),
            mode: Mode::Cooling,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        if !(self.r >= 0.0) {
            return Err(Error::invalid("r must be non-negative"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if self.control_step <= 0 || self.control_step % 60 != 0 || 86_400 % self.control_step != 0 {
            return Err(Error::invalid("control_step must be a whole number of minutes dividing a day"));
        }
        if !(self.u_min <= self.u_max) || self.u_min < 0.0 || self.u_max > 1.0 {
            return Err(Error::invalid("input bounds must satisfy 0 ≤ u_min ≤ u_max ≤ 1"));
        }
        if !(self.tol > 0.0) || !(self.margin >= 0.0) {
            return Err(Error::invalid("tol must be positive and margin non-negative"));
        }
        self.comfort.validate()
    }

    pub fn weights(&self) -> HorizonWeights {
        HorizonWeights {
            r: self.r,
            lambda: self.lambda,
            u_min: self.u_min,
            u_max: self.u_max,
        }
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    /// Valve duties over the horizon.
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub solve_secs: f64,
}

/// Horizon objective for duties `u` and predicted outputs `y`.
pub fn horizon_objective(u: &[f64], eps: &[f64], r: f64, lambda: f64) -> f64 {
    u.iter().map(|v| r * v * v).sum::<f64>() + lambda * eps.iter().sum::<f64>()
}

pub fn slacks(y: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    y.iter()
        .zip(bounds)
        .map(|(v, (lo, hi))| (v - hi).max(lo - v).max(0.0))
        .collect()
}

/// Solves the horizon QP for linear dynamics. The returned inputs are
/// clipped to their box and the outputs and slacks recomputed from the
/// dynamics, so both hold exactly.
pub fn solve_affine_mpc(dynamics: &AffineDynamics, bounds: &[(f64, f64)], cfg: &MpcConfig) -> Result<MpcSolution> {
    let started = std::time::Instant::now();
    let qp = build_qp(dynamics, bounds, &cfg.weights())?;
    let settings = AdmmSettings {
        max_iter: cfg.max_iter,
        ..AdmmSettings::with_tol(cfg.tol)
    };
    let sol = solve_qp_with(&qp, &settings)?;
    let lay = qp.layout.expect("horizon problems carry a layout");
    let u: Vec<f64> = (0..lay.steps)
        .map(|k| sol.x[lay.u(k)].clamp(cfg.u_min, cfg.u_max))
        .collect();
    let y = dynamics.simulate(&u);
    let eps = slacks(&y, bounds);
    Ok(MpcSolution {
        objective: horizon_objective(&u, &eps, cfg.r, cfg.lambda),
        u,
        y,
        eps,
        iterations: sol.iterations,
        solve_secs: started.elapsed().as_secs_f64(),
    })
}
