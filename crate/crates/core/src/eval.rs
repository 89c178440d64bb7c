//! Open-loop accuracy, the sample-efficiency study, degree-day energy
//! regressions, comfort metrics and solver benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, TimeSeries};
use crate::error::{Error, Result};
use crate::features::{FeatureFrame, RegressorConfig};
use crate::models::{train_zone, ModelKind, ZoneModel};
use crate::mpc::{solve_affine_mpc, solve_icnn_mpc, IcnnMpcSettings, MpcConfig, MpcSolution};
use crate::plant::Mode;

/// Mean squared error of the `horizon_secs`-ahead open-loop prediction,
/// taken at the final step only, over every admissible origin of every
/// segment.
pub fn mse_openloop(model: &ZoneModel, segments: &[TimeSeries], horizon_secs: i64) -> Result<f64> {
    let step = model.step_secs();
    if horizon_secs <= 0 || horizon_secs % step != 0 {
        return Err(Error::NonIntegerRatio {
            step,
            new_step: horizon_secs,
        });
    }
    let h = (horizon_secs / step) as usize;
    let first = model.min_history();
    let mut sum = 0.0;
    let mut count = 0usize;
    for seg in segments {
        if seg.step_secs() != step {
            return Err(Error::invalid("validation data and model use different sample periods"));
        }
        if seg.len() <= first + h {
            continue;
        }
        let frame = FeatureFrame::new(seg, model.config())?;
        for now in first..seg.len() - h {
            let pred = model.predict_frame(&frame, now, h, None)?;
            let e = pred[h - 1] - frame.y[now + h];
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        let have = segments.iter().map(TimeSeries::len).max().unwrap_or(0);
        return Err(Error::TooShort { needed: first + h, have });
    }
    Ok(sum / count as f64)
}

/// One model variant of a study: family plus regressor configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub kind: ModelKind,
    pub config: RegressorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub horizon_secs: i64,
    /// Validation weeks drawn per repetition from the folds not used for
    /// training.
    pub validation_weeks: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            sizes: vec![1, 2, 4, 8],
            reps: 100,
            seed: 0,
            horizon_secs: 3600,
            validation_weeks: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEffCell {
    pub weeks: usize,
    pub model: String,
    pub median: f64,
    pub p16: f64,
    pub p84: f64,
    pub mses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEffReport {
    pub options: StudyOptions,
    pub cells: Vec<SampleEffCell>,
}

impl SampleEffReport {
    pub fn cell(&self, weeks: usize, model: &str) -> Option<&SampleEffCell> {
        self.cells.iter().find(|c| c.weeks == weeks && c.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("weeks,model,median,p16,p84\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{:.9e},{:.9e},{:.9e}\n", c.weeks, c.model, c.median, c.p16, c.p84));
        }
        s
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for cell `(a, b)` of a study, independent of evaluation order.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ a) ^ b)
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// For each training size and repetition, draws weekly folds, trains every
/// variant on the same training folds and scores it on the same
/// validation folds. Repetitions run in parallel; the report does not
/// depend on scheduling.
pub fn sample_efficiency(ts: &TimeSeries, variants: &[Variant], opts: &StudyOptions) -> Result<SampleEffReport> {
    if opts.reps == 0 || opts.sizes.is_empty() || variants.is_empty() {
        return Err(Error::invalid("study needs repetitions, sizes and variants"));
    }
    if opts.horizon_secs % ts.step_secs() != 0 {
        return Err(Error::NonIntegerRatio {
            step: ts.step_secs(),
            new_step: opts.horizon_secs,
        });
    }
    let horizon_steps = (opts.horizon_secs / ts.step_secs()) as usize;
    let max_size = *opts.sizes.iter().max().expect("non-empty sizes");
    let weeks_available = ts.span_secs() / crate::data::WEEK_SECS;
    if (weeks_available as usize) < max_size + opts.validation_weeks.max(1) {
        return Err(Error::NotEnoughData(format!(
            "{weeks_available} weeks available, study needs {}",
            max_size + opts.validation_weeks.max(1)
        )));
    }
    let jobs: Vec<(usize, usize)> = opts
        .sizes
        .iter()
        .flat_map(|&s| (0..opts.reps).map(move |r| (s, r)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(size, rep)| -> Result<Vec<f64>> {
            let seed = derive_seed(opts.seed, size as u64, rep as u64);
            let split = split_folds(ts, size, seed)?;
            let mut val = split.validation_fold_indices.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(6);
            val.shuffle(&mut rng);
            if opts.validation_weeks > 0 {
                val.truncate(opts.validation_weeks);
            }
            val.sort_unstable();
            let train = split.train_segments(ts);
            let valid: Vec<TimeSeries> = val.iter().map(|&f| ts.slice(split.fold_range(f))).collect();
            variants
                .iter()
                .map(|v| {
                    let model = train_zone(&v.kind.with_seed(seed), &train, &v.config, horizon_steps)?;
                    mse_openloop(&model, &valid, opts.horizon_secs)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for &size in &opts.sizes {
        for (vi, v) in variants.iter().enumerate() {
            let mses: Vec<f64> = jobs
                .iter()
                .zip(&results)
                .filter(|((s, _), _)| *s == size)
                .map(|(_, r)| r[vi])
                .collect();
            let mut sorted = mses.clone();
            sorted.sort_by(f64::total_cmp);
            cells.push(SampleEffCell {
                weeks: size,
                model: v.label.clone(),
                median: percentile(&sorted, 50.0),
                p16: percentile(&sorted, 16.0),
                p84: percentile(&sorted, 84.0),
                mses,
            });
        }
    }
    Ok(SampleEffReport {
        options: opts.clone(),
        cells,
    })
}

/// Daily totals used by the energy regressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyAggregate {
    pub day: String,
    /// Heating (or cooling) energy, Wh.
    pub energy_wh: f64,
    pub t_amb: f64,
    pub i_hor: f64,
    pub t_room: f64,
}

/// Rooms outside this mean temperature range on a day are not in normal
/// operation; such days are dropped from energy regressions.
pub const NORMAL_ROOM_RANGE: (f64, f64) = (21.0, 27.0);

/// Splits a simulator log into whole days. Energy counts the total actuator
/// power in the direction of `mode`.
pub fn daily_aggregates(log: &TimeSeries, mode: Mode) -> Result<Vec<DailyAggregate>> {
    let per_day = (86_400 / log.step_secs()) as usize;
    let q = log.channel("Q_total")?;
    let amb = log.channel("T_amb")?;
    let ihor = log.channel("I_hor")?;
    let zones: Vec<&[f64]> = (1..)
        .map(|z| format!("T_{z}"))
        .take_while(|n| log.has_channel(n))
        .map(|n| log.channel(&n))
        .collect::<Result<_>>()?;
    if zones.is_empty() {
        return Err(Error::MissingChannel("T_1".into()));
    }
    let hours = log.step_secs() as f64 / 3600.0;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((0..log.len() / per_day)
        .map(|d| {
            let r = d * per_day..(d + 1) * per_day;
            let energy = q[r.clone()].iter().map(|v| (mode.sign() * v).max(0.0)).sum::<f64>() * hours;
            DailyAggregate {
                day: log.time_at(r.start).format("%Y-%m-%d").to_string(),
                energy_wh: energy,
                t_amb: mean(&amb[r.clone()]),
                i_hor: mean(&ihor[r.clone()]),
                t_room: zones.iter().map(|z| mean(&z[r.clone()])).sum::<f64>() / zones.len() as f64,
            }
        })
        .collect())
}

pub fn normal_operation_days(days: &[DailyAggregate]) -> Vec<DailyAggregate> {
    days.iter()
        .filter(|d| (NORMAL_ROOM_RANGE.0..=NORMAL_ROOM_RANGE.1).contains(&d.t_room))
        .cloned()
        .collect()
}

/// `Q = θ_dd·DD + θ_sol·I_hor + c` with `DD = T_ref − T_amb` for heating
/// and `T_amb − T_ref` for cooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeDayRegression {
    pub theta_dd: f64,
    pub theta_sol: f64,
    pub c: f64,
    pub r_squared: f64,
    pub mode: Mode,
    pub t_ref: f64,
}

impl DegreeDayRegression {
    pub fn degree_days(&self, t_amb: f64) -> f64 {
        match self.mode {
            Mode::Heating => self.t_ref - t_amb,
            Mode::Cooling => t_amb - self.t_ref,
        }
    }

    /// Degree days with solar irradiance folded in through the coefficient
    /// ratio, so that `Q = θ_dd·DSD + c`.
    pub fn degree_solar_days(&self, t_amb: f64, i_hor: f64) -> f64 {
        self.degree_days(t_amb) + self.theta_sol / self.theta_dd * i_hor
    }

    pub fn predict(&self, t_amb: f64, i_hor: f64) -> f64 {
        self.theta_dd * self.degree_days(t_amb) + self.theta_sol * i_hor + self.c
    }
}

pub const MIN_REGRESSION_DAYS: usize = 10;

/// Ordinary least squares of daily energy on degree days and irradiance.
pub fn degree_day_regression(days: &[DailyAggregate], mode: Mode, t_ref: f64) -> Result<DegreeDayRegression> {
    if days.len() < MIN_REGRESSION_DAYS {
        return Err(Error::NotEnoughData(format!(
            "{} days, regression needs {MIN_REGRESSION_DAYS}",
            days.len()
        )));
    }
    let dd = |t: f64| match mode {
        Mode::Heating => t_ref - t,
        Mode::Cooling => t - t_ref,
    };
    let n = days.len();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => dd(days[i].t_amb),
        1 => days[i].i_hor,
        _ => 1.0,
    });
    let y = DVector::from_iterator(n, days.iter().map(|d| d.energy_wh));
    let norms: Vec<f64> = (0..3).map(|j| x.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let mut xs = x.clone();
    for (j, s) in norms.iter().enumerate() {
        xs.column_mut(j).unscale_mut(*s);
    }
    let svd = xs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::SingularDesign);
    }
    let beta = svd.solve(&y, 0.0).map_err(|_| Error::SingularDesign)?;
    let theta: Vec<f64> = (0..3).map(|j| beta[j] / norms[j]).collect();
    let fit = &x * DVector::from_vec(theta.clone());
    let ss_res = (&y - fit).norm_squared();
    let mean = y.mean();
    let ss_tot = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res <= 1e-12 * (1.0 + y.norm_squared()) {
        1.0
    } else {
        0.0
    };
    Ok(DegreeDayRegression {
        theta_dd: theta[0],
        theta_sol: theta[1],
        c: theta[2],
        r_squared,
        mode,
        t_ref,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyComparison {
    pub mpc: DegreeDayRegression,
    pub baseline: DegreeDayRegression,
    /// Predicted MPC energy over predicted baseline energy on the pooled
    /// weather of both day sets.
    pub ratio: f64,
    /// `1 − ratio`.
    pub saving: f64,
    /// Per pooled day: baseline degree-solar days and the predicted saving.
    pub curve: Vec<(f64, f64)>,
}

/// Fits both controllers' regressions and compares them on the union of
/// their weather.
pub fn compare_energy(mpc: &[DailyAggregate], baseline: &[DailyAggregate], mode: Mode, t_ref: f64) -> Result<EnergyComparison> {
    let m = degree_day_regression(mpc, mode, t_ref)?;
    let b = degree_day_regression(baseline, mode, t_ref)?;
    let pooled: Vec<&DailyAggregate> = mpc.iter().chain(baseline).collect();
    let qm: f64 = pooled.iter().map(|d| m.predict(d.t_amb, d.i_hor)).sum();
    let qb: f64 = pooled.iter().map(|d| b.predict(d.t_amb, d.i_hor)).sum();
    if qb == 0.0 {
        return Err(Error::invalid("baseline predicts zero energy"));
    }
    let ratio = qm / qb;
    let mut curve: Vec<(f64, f64)> = pooled
        .iter()
        .map(|d| {
            let pb = b.predict(d.t_amb, d.i_hor);
            (b.degree_solar_days(d.t_amb, d.i_hor), 1.0 - m.predict(d.t_amb, d.i_hor) / pb)
        })
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(EnergyComparison {
        mpc: m,
        baseline: b,
        ratio,
        saving: 1.0 - ratio,
        curve,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// K·h.
    pub integral_kh: f64,
    pub max: f64,
    pub fraction: f64,
}

/// Exceedance `max(y − y_max, y_min − y)` interpolated linearly between
/// samples at `times` (s); its positive part is integrated exactly.
pub fn comfort_violation(times: &[f64], y: &[f64], bounds: impl Fn(f64) -> (f64, f64)) -> Result<Violation> {
    if times.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: y.len(),
        });
    }
    let e: Vec<f64> = times
        .iter()
        .zip(y)
        .map(|(&t, &v)| {
            let (lo, hi) = bounds(t);
            (v - hi).max(lo - v)
        })
        .collect();
    let mut area = 0.0;
    let mut violated = 0.0;
    for k in 1..e.len() {
        let dt = times[k] - times[k - 1];
        let (a, b) = (e[k - 1], e[k]);
        if a >= 0.0 && b >= 0.0 {
            area += 0.5 * (a + b) * dt;
            if a > 0.0 || b > 0.0 {
                violated += dt;
            }
        } else if a > 0.0 || b > 0.0 {
            let pos = a.max(b);
            let share = pos / (a.abs() + b.abs());
            area += 0.5 * pos * share * dt;
            violated += share * dt;
        }
    }
    let span = match (times.first(), times.last()) {
        (Some(a), Some(b)) if b > a => b - a,
        _ => 0.0,
    };
    Ok(Violation {
        integral_kh: area / 3600.0,
        max: e.iter().copied().fold(0.0, f64::max),
        fraction: if span > 0.0 { violated / span } else { 0.0 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub mean_secs: f64,
    pub std_secs: f64,
    /// Largest resident-set growth observed across a solve, kB.
    pub rss_delta_kb: i64,
    pub reps: usize,
}

/// Resident set size of this process in kB, where the platform reports it.
pub fn resident_kb() -> Option<i64> {
    let s = std::fs::read_to_string("/proc/self/status").ok()?;
    s.lines()
        .find(|l| l.starts_with("VmRSS:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

/// A fixed optimization: one frame, origin and upper comfort bounds.
pub struct BenchScenario<'a> {
    pub frame_data: &'a TimeSeries,
    pub now: usize,
    pub config: MpcConfig,
}

/// One MPC solve of `model` on the scenario: gains, dynamics and the
/// optimization. Upper comfort bounds only, as in the timing comparison.
pub fn solve_scenario(model: &ZoneModel, frame: &FeatureFrame, scenario: &BenchScenario<'_>) -> Result<MpcSolution> {
    let cfg = &scenario.config;
    let step = cfg.control_step as f64;
    let t0 = scenario.frame_data.time_at(scenario.now).timestamp() as f64;
    let bounds: Vec<(f64, f64)> = (0..cfg.horizon)
        .map(|j| (f64::NEG_INFINITY, cfg.comfort.at(t0 + (j as f64 + 1.5) * step).1))
        .collect();
    let g = model.energy_gain().unwrap_or(1.0);
    let gains: Vec<f64> = (0..cfg.horizon)
        .map(|m| frame.actuator_gain(scenario.now + m, scenario.now, g))
        .collect();
    match model {
        ZoneModel::Icnn(m) => {
            let s = IcnnMpcSettings {
                r: cfg.r,
                lambda: cfg.lambda,
                u_min: cfg.u_min,
                u_max: cfg.u_max,
                ..IcnnMpcSettings::default()
            };
            solve_icnn_mpc(m, frame, scenario.now, &gains, &bounds, &s)
        }
        _ => {
            let d = model
                .affine_dynamics(frame, scenario.now, cfg.horizon, &gains)?
                .expect("linear families have affine dynamics");
            solve_affine_mpc(&d, &bounds, cfg)
        }
    }
}

/// Times one complete solve (problem construction included) per model,
/// after one warm-up solve.
pub fn bench_solvers(models: &[(&str, &ZoneModel)], scenario: &BenchScenario<'_>, reps: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for (name, model) in models {
        let frame = FeatureFrame::new(scenario.frame_data, model.config())?;
        let solve = || solve_scenario(model, &frame, scenario).map(|_| ());
        solve()?;
        let mut times = Vec::with_capacity(reps);
        let mut rss_delta = 0;
        for _ in 0..reps {
            let before = resident_kb();
            let started = std::time::Instant::now();
            solve()?;
            times.push(started.elapsed().as_secs_f64());
            if let (Some(a), Some(b)) = (before, resident_kb()) {
                rss_delta = rss_delta.max(b - a);
            }
        }
        let mean = times.iter().sum::<f64>() / reps.max(1) as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / reps.max(1) as f64;
        rows.push(BenchRow {
            model: (*name).to_string(),
            mean_secs: mean,
            std_secs: var.sqrt(),
            rss_delta_kb: rss_delta,
            reps,
        });
    }
    Ok(rows)
}
