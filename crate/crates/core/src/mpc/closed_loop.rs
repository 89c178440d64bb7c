use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::icnn_mpc::{solve_icnn_mpc, IcnnMpcSettings};
use super::{solve_affine_mpc, ComfortSchedule, MpcConfig, MpcSolution};
use crate::data::{TimeSeries, Unit};
use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::models::{ModelBundle, ZoneModel};
use crate::plant::{
    dataset_schema, simulate, BaselineSetpoints, ControlContext, DatasetOptions, HysteresisPolicy, Mode, ModeSchedule,
    Plant, PlantParams, ValvePolicy, LOG_STEP,
};

/// Error added to the ambient-temperature forecast handed to the
/// controller; the plant always sees the true weather.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecastError {
    #[default]
    None,
    /// Independent Gaussian error per forecast step, K.
    AmbientNoise { std: f64 },
}

/// One zone's decision at one control step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub zone: usize,
    pub duty: f64,
    pub objective: Option<f64>,
    pub iterations: usize,
    pub solve_secs: f64,
    /// Why the hysteresis fallback was used, if it was.
    pub fallback: Option<String>,
}

/// MPC as a valve policy: every zone's horizon problem is solved at each
/// control step and the first duty applied; any failure falls back to the
/// hysteresis action for that zone and step.
pub struct MpcPolicy<'m> {
    models: &'m ModelBundle,
    config: MpcConfig,
    fallback: HysteresisPolicy,
    forecast: ForecastError,
    rng: ChaCha8Rng,
    pub records: Vec<StepRecord>,
}

impl<'m> MpcPolicy<'m> {
    pub fn new(
        models: &'m ModelBundle,
        config: MpcConfig,
        fallback: BaselineSetpoints,
        forecast: ForecastError,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        for (i, m) in models.zones.iter().enumerate() {
            if m.step_secs() != config.control_step {
                return Err(Error::invalid(format!(
                    "zone {} model was trained at {}s, controller runs at {}s",
                    i + 1,
                    m.step_secs(),
                    config.control_step
                )));
            }
            if let Some(h) = m.max_steps() {
                if h < config.horizon {
                    return Err(Error::ForecastTooShort {
                        needed: config.horizon,
                        have: h,
                    });
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(4);
        Ok(Self {
            fallback: HysteresisPolicy::new(fallback, models.zones.len())?,
            models,
            config,
            forecast,
            rng,
            records: Vec::new(),
        })
    }

    /// Feature frame at the control step: measured history, the current
    /// interval at `now` and `horizon` forecast rows.
    fn frame(&mut self, ctx: &ControlContext<'_>, model: &ZoneModel) -> Result<(FeatureFrame, usize)> {
        let step = self.config.control_step;
        let sub = (step / LOG_STEP) as usize;
        let n = self.config.horizon;
        let hist_len = model.min_history() + 1;
        let hist = ctx.history_tail(hist_len * sub)?;
        if hist.len() < hist_len * sub {
            return Err(Error::NotEnoughData(format!(
                "controller needs {} logged minutes, have {}",
                hist_len * sub,
                hist.len()
            )));
        }
        let hist = hist.resample(step)?;
        let ahead = ctx
            .weather_ahead(n * sub)
            .ok_or(Error::ForecastTooShort {
                needed: ctx.index + n * sub,
                have: ctx.weather.len(),
            })?;
        let minute_amb = ahead.channel("T_amb")?;
        let t_sup_min: Vec<f64> = minute_amb.iter().map(|&t| ctx.supply.temperature(ctx.mode, t)).collect();
        let ahead = ahead.with_channel("T_sup_forecast", Unit::Celsius, t_sup_min)?.resample(step)?;
        let mut amb = ahead.channel("T_amb")?.to_vec();
        if let ForecastError::AmbientNoise { std } = self.forecast {
            if std > 0.0 {
                let d = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
                for v in &mut amb {
                    *v += d.sample(&mut self.rng);
                }
            }
        }
        let i_hor = ahead.channel("I_hor")?;
        let t_sup = ahead.channel("T_sup_forecast")?;

        let nz = ctx.measured.len();
        let schema = dataset_schema(nz);
        let mut b = TimeSeries::builder(hist.start(), step);
        for (name, unit) in schema.iter() {
            let past = hist.channel(name)?;
            let last = *past.last().expect("history is non-empty");
            let future: Vec<f64> = match name.as_str() {
                "T_amb" => amb.clone(),
                "I_hor" => i_hor.to_vec(),
                "T_sup" => t_sup.to_vec(),
                "mode" => vec![ctx.mode.sign(); n],
                s if s.starts_with("b_") || s.starts_with("Q_") => vec![0.0; n],
                _ => vec![last; n],
            };
            let mut v = past.to_vec();
            v.extend(future);
            b = b.channel(name.clone(), *unit, v);
        }
        let ts = b.build()?;
        let mut frame = FeatureFrame::new(&ts, model.config())?;
        let now = hist_len;
        // the current interval is not measured yet; predict it from the last
        frame.y[now] = model.predict_frame(&frame, now - 1, 1, None)?[0];
        Ok((frame, now))
    }

    fn bounds(&self, ctx: &ControlContext<'_>, lower: bool) -> Vec<(f64, f64)> {
        let step = self.config.control_step as f64;
        let t0 = ctx.time.timestamp() as f64;
        let m = self.config.margin;
        (0..self.config.horizon)
            .map(|j| {
                // output j is the mean over the interval after decision j
                let mid = t0 + (j as f64 + 1.5) * step;
                let (lo, hi) = self.config.comfort.at(mid);
                let lo = if lower { lo + m } else { f64::NEG_INFINITY };
                let hi = hi - m;
                if lo > hi {
                    let c = 0.5 * (lo + hi);
                    (c, c)
                } else {
                    (lo, hi)
                }
            })
            .collect()
    }

    fn plan_zone(&mut self, ctx: &ControlContext<'_>, zone: usize) -> Result<MpcSolution> {
        let model = &self.models.zones[zone];
        let (frame, now) = self.frame(ctx, model)?;
        let n = self.config.horizon;
        let g = model.energy_gain().unwrap_or(1.0);
        let gains: Vec<f64> = (0..n).map(|m| frame.actuator_gain(now + m, now, g)).collect();
        match model {
            ZoneModel::Icnn(m) => {
                let lower = self.config.allow_nonconvex_lower_bound;
                if !lower && ctx.mode == Mode::Heating {
                    return Err(Error::LowerBoundRequested);
                }
                let bounds = self.bounds(ctx, lower);
                let settings = IcnnMpcSettings {
                    r: self.config.r,
                    lambda: self.config.lambda,
                    u_min: self.config.u_min,
                    u_max: self.config.u_max,
                    allow_nonconvex_lower_bound: lower,
                    seed: ctx.index as u64,
                    ..IcnnMpcSettings::default()
                };
                solve_icnn_mpc(m, &frame, now, &gains, &bounds, &settings)
            }
            _ => {
                let started = std::time::Instant::now();
                let dynamics = model
                    .affine_dynamics(&frame, now, n, &gains)?
                    .expect("linear families have affine dynamics");
                let bounds = self.bounds(ctx, true);
                let mut sol = solve_affine_mpc(&dynamics, &bounds, &self.config)?;
                sol.solve_secs = started.elapsed().as_secs_f64();
                Ok(sol)
            }
        }
    }
}

impl ValvePolicy for MpcPolicy<'_> {
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<Vec<f64>> {
        let nz = ctx.measured.len();
        if nz != self.models.zones.len() {
            return Err(Error::DimensionMismatch {
                expected: self.models.zones.len(),
                got: nz,
            });
        }
        let mut duties = Vec::with_capacity(nz);
        for z in 0..nz {
            let started = std::time::Instant::now();
            let record = match self.plan_zone(ctx, z) {
                Ok(sol) => StepRecord {
                    index: ctx.index,
                    zone: z,
                    duty: sol.u[0],
                    objective: Some(sol.objective),
                    iterations: sol.iterations,
                    solve_secs: sol.solve_secs,
                    fallback: None,
                },
                Err(e) => StepRecord {
                    index: ctx.index,
                    zone: z,
                    duty: self.fallback.zone_duty(z, ctx.measured[z], ctx.mode),
                    objective: None,
                    iterations: 0,
                    solve_secs: started.elapsed().as_secs_f64(),
                    fallback: Some(e.to_string()),
                },
            };
            duties.push(record.duty);
            self.records.push(record);
        }
        Ok(duties)
    }
}

#[derive(Clone, Debug)]
pub enum Controller {
    Hysteresis(BaselineSetpoints),
    Mpc {
        models: ModelBundle,
        config: MpcConfig,
        fallback: BaselineSetpoints,
    },
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub log: TimeSeries,
    pub steps: Vec<StepRecord>,
}

/// Runs a controller against the plant with the weather and noise of
/// `opts`. Hysteresis runs switch every logged minute exactly as the
/// dataset generator does; MPC runs use the configured control step and
/// mode, with one day of extra weather for the forecasts.
pub fn closed_loop(
    params: &PlantParams,
    controller: &Controller,
    opts: &DatasetOptions,
    forecast: ForecastError,
) -> Result<ClosedLoopRun> {
    let plant = Plant::new(params.clone())?;
    match controller {
        Controller::Hysteresis(sp) => {
            let weather = opts.weather_trace(params, 0)?;
            let mut policy = HysteresisPolicy::new(*sp, plant.n_zones())?;
            let log = simulate(&plant, &weather, &opts.sim_options(), &mut policy)?;
            Ok(ClosedLoopRun { log, steps: Vec::new() })
        }
        Controller::Mpc {
            models,
            config,
            fallback,
        } => {
            if models.zones.len() != plant.n_zones() {
                return Err(Error::DimensionMismatch {
                    expected: plant.n_zones(),
                    got: models.zones.len(),
                });
            }
            let weather = opts.weather_trace(params, 1)?;
            let mut sim = opts.sim_options();
            sim.control_step = config.control_step;
            sim.mode = ModeSchedule::Fixed { mode: config.mode };
            let mut policy = MpcPolicy::new(models, config.clone(), *fallback, forecast, opts.seed)?;
            let log = simulate(&plant, &weather, &sim, &mut policy)?;
            Ok(ClosedLoopRun {
                log,
                steps: policy.records,
            })
        }
    }
}

/// Deterministic outcome of a closed-loop run; solver timing is reported
/// separately so repeated runs compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub days: f64,
    pub heating_kwh: f64,
    pub cooling_kwh: f64,
    pub zone_heating_kwh: Vec<f64>,
    pub zone_cooling_kwh: Vec<f64>,
    /// Summed over zones, K·h.
    pub violation_kh: f64,
    pub max_violation: f64,
    pub violation_fraction: f64,
    pub mean_temperature: f64,
    pub fallback_steps: usize,
    pub control_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTiming {
    pub mean_solve_secs: f64,
    pub max_solve_secs: f64,
    pub solves: usize,
}

impl ClosedLoopRun {
    pub fn n_zones(&self) -> usize {
        self.log.channel_names().filter(|n| n.starts_with("b_")).count()
    }

    pub fn summary(&self, comfort: &ComfortSchedule) -> Result<ClosedLoopSummary> {
        let nz = self.n_zones();
        let hours = LOG_STEP as f64 / 3600.0;
        let mut zone_heat = Vec::with_capacity(nz);
        let mut zone_cool = Vec::with_capacity(nz);
        let mut violation = 0.0;
        let mut max_violation: f64 = 0.0;
        let mut fraction = 0.0;
        let mut temp_sum = 0.0;
        for z in 1..=nz {
            let q = self.log.channel(&format!("Q_act_{z}"))?;
            zone_heat.push(q.iter().map(|v| v.max(0.0)).sum::<f64>() * hours / 1000.0);
            zone_cool.push(q.iter().map(|v| (-v).max(0.0)).sum::<f64>() * hours / 1000.0);
            let t = self.log.channel(&format!("T_{z}"))?;
            let times: Vec<f64> = (0..t.len()).map(|k| k as f64 * LOG_STEP as f64).collect();
            let tod0 = self.log.time_of_day(0) - LOG_STEP as f64 / 2.0;
            let v = crate::eval::comfort_violation(&times, t, |s| comfort.at(tod0 + s))?;
            violation += v.integral_kh;
            max_violation = max_violation.max(v.max);
            fraction += v.fraction / nz as f64;
            temp_sum += t.iter().sum::<f64>() / t.len() as f64 / nz as f64;
        }
        let control_steps = self.steps.iter().map(|s| s.index).collect::<std::collections::BTreeSet<_>>().len();
        Ok(ClosedLoopSummary {
            days: self.log.len() as f64 * LOG_STEP as f64 / 86_400.0,
            heating_kwh: zone_heat.iter().sum(),
            cooling_kwh: zone_cool.iter().sum(),
            zone_heating_kwh: zone_heat,
            zone_cooling_kwh: zone_cool,
            violation_kh: violation,
            max_violation,
            violation_fraction: fraction,
            mean_temperature: temp_sum,
            fallback_steps: self.steps.iter().filter(|s| s.fallback.is_some()).count(),
            control_steps,
        })
    }

    pub fn timing(&self) -> SolveTiming {
        let solved: Vec<f64> = self.steps.iter().filter(|s| s.fallback.is_none()).map(|s| s.solve_secs).collect();
        SolveTiming {
            mean_solve_secs: if solved.is_empty() { 0.0 } else { solved.iter().sum::<f64>() / solved.len() as f64 },
            max_solve_secs: solved.iter().copied().fold(0.0, f64::max),
            solves: solved.len(),
        }
    }
}
