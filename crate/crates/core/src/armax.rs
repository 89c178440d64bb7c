//! Physics-informed ARMAX: next-step temperature linear in lagged outputs,
//! actuator drive, ambient, neighbor and one-hot solar features, with the
//! coefficients optionally constrained non-negative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};
use crate::features::{build_regression_rows_segments, ActuatorOption, FeatureFrame, RegressorConfig};
use crate::linalg;
use crate::nnls;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub rows: usize,
    pub residual_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmaxModel {
    pub theta: Vec<f64>,
    pub config: RegressorConfig,
    pub nonneg: bool,
    pub training_stats: TrainingStats,
    /// Sample period of the training data, s.
    pub step_secs: i64,
    /// Watts per unit of valve·(T_sup − T̄), fitted when the actuator is
    /// measured energy so duties can be mapped to model inputs.
    #[serde(default)]
    pub energy_gain: Option<f64>,
}

impl ArmaxModel {
    pub fn fit(ts: &TimeSeries, config: &RegressorConfig, nonneg: bool) -> Result<Self> {
        Self::fit_segments(std::slice::from_ref(ts), config, nonneg)
    }

    /// Fits on the stacked rows of several contiguous segments; no row
    /// spans a segment boundary.
    pub fn fit_segments(segments: &[TimeSeries], config: &RegressorConfig, nonneg: bool) -> Result<Self> {
        let step_secs = segments
            .first()
            .ok_or_else(|| Error::NotEnoughData("no training segments".into()))?
            .step_secs();
        if segments.iter().any(|s| s.step_secs() != step_secs) {
            return Err(Error::invalid("training segments have different sample periods"));
        }
        let (x, y) = build_regression_rows_segments(segments, config)?;
        let theta = solve(&x, &y, nonneg)?;
        let residual_norm = (&x * &theta - &y).norm();
        let energy_gain = match config.actuator {
            ActuatorOption::MeasuredEnergy => Some(crate::features::fit_energy_gain(segments, config)?),
            _ => None,
        };
        Ok(Self {
            theta: theta.as_slice().to_vec(),
            config: config.clone(),
            nonneg,
            training_stats: TrainingStats {
                rows: x.nrows(),
                residual_norm,
            },
            step_secs,
            energy_gain,
        })
    }

    pub fn lags(&self) -> usize {
        self.config.delta + 1
    }

    /// One-step prediction from a regression row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.theta).map(|(x, t)| x * t).sum()
    }

    /// Recursive prediction of `y[now+1 ..= now+steps]` from measurements
    /// up to `now`. `u[j]` is the actuator input (model units) at sample
    /// `now + j`; when `None` the frame's inputs are used with the room
    /// temperature frozen at its last measurement. Outputs after `now` are
    /// never read from the frame.
    pub fn predict_frame(&self, frame: &FeatureFrame, now: usize, steps: usize, u: Option<&[f64]>) -> Result<Vec<f64>> {
        let layout = frame.layout();
        if layout.width() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                got: layout.width(),
            });
        }
        if now < self.config.delta {
            return Err(Error::TooShort {
                needed: self.config.delta,
                have: now,
            });
        }
        if steps == 0 {
            return Ok(Vec::new());
        }
        if now + steps > frame.len() {
            return Err(Error::ForecastTooShort {
                needed: now + steps,
                have: frame.len(),
            });
        }
        if let Some(u) = u {
            if u.len() < steps {
                return Err(Error::ForecastTooShort { needed: steps, have: u.len() });
            }
        }
        let y_now = frame.y[now];
        let input = |i: usize| -> f64 {
            if i < now {
                frame.actuator_at(i, frame.y[i])
            } else {
                match u {
                    Some(u) => u[i - now],
                    None => frame.actuator_at(i, y_now),
                }
            }
        };
        let mut pred = Vec::with_capacity(steps);
        let mut row = vec![0.0; layout.width()];
        for j in 0..steps {
            let i = now + j;
            for lag in 0..layout.lags() {
                let idx = i - lag;
                row[layout.output(lag)] = if idx > now { pred[idx - now - 1] } else { frame.y[idx] };
                frame.exogenous_into(idx, lag, input(idx), &mut row);
            }
            pred.push(self.predict_row(&row));
        }
        Ok(pred)
    }

    /// Open-loop prediction over `ts`; see [`ArmaxModel::predict_frame`].
    pub fn predict_openloop(&self, ts: &TimeSeries, now: usize, u: Option<&[f64]>, steps: usize) -> Result<Vec<f64>> {
        let frame = FeatureFrame::new(ts, &self.config)?;
        self.predict_frame(&frame, now, steps, u)
    }

    /// Horizon dynamics in the valve duties `b_{now..now+steps}`; `gains[m]`
    /// converts duty at `now + m` into model input units.
    pub fn affine_dynamics(&self, frame: &FeatureFrame, now: usize, steps: usize, gains: &[f64]) -> Result<AffineDynamics> {
        let layout = frame.layout();
        if now < self.config.delta || now + steps > frame.len() {
            return Err(Error::ForecastTooShort {
                needed: now + steps,
                have: frame.len(),
            });
        }
        let mut d = AffineDynamics::zeros(steps);
        let mut row = vec![0.0; layout.width()];
        for j in 0..steps {
            let i = now + j;
            let mut c = 0.0;
            for lag in 0..layout.lags() {
                let idx = i - lag;
                let th_y = self.theta[layout.output(lag)];
                let th_u = self.theta[layout.actuator(lag)];
                if idx > now {
                    d.recursion[(j, idx - now - 1)] += th_y;
                } else {
                    c += th_y * frame.y[idx];
                }
                if idx >= now {
                    d.input[(j, idx - now)] += th_u * gains[idx - now];
                } else {
                    c += th_u * frame.actuator_at(idx, frame.y[idx]);
                }
                frame.exogenous_into(idx, lag, 0.0, &mut row);
                for (k, t) in self.theta.iter().enumerate() {
                    let is_output = k < layout.lags();
                    let is_actuator = (layout.lags()..2 * layout.lags()).contains(&k);
                    if !is_output && !is_actuator && k % layout.lags() == lag {
                        c += t * row[k];
                    }
                }
            }
            d.constant[j] = c;
        }
        Ok(d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.theta.len() != m.config.degrees_of_freedom() {
            return Err(Error::DimensionMismatch {
                expected: m.config.degrees_of_freedom(),
                got: m.theta.len(),
            });
        }
        Ok(m)
    }
}

fn solve(x: &DMatrix<f64>, y: &DVector<f64>, nonneg: bool) -> Result<DVector<f64>> {
    if nonneg {
        return nnls::nnls(x, y);
    }
    let n = x.ncols();
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let rms = x.column(j).norm() / (x.nrows().max(1) as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = x.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let mut theta = linalg::lstsq(&scaled, y);
    for (t, s) in theta.iter_mut().zip(&scales) {
        *t /= s;
    }
    Ok(theta)
}
