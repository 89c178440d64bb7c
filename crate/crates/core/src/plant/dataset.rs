//! Closed-loop simulation driver shared by dataset generation and MPC runs.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hysteresis::{hysteresis_control, HysteresisConfig};
use super::weather::{synth_weather_with, WeatherConfig};
use super::{Mode, Plant, PlantParams, PlantState, WeatherSample};
use crate::data::{Schema, TimeSeries, Unit};
use crate::error::{Error, Result};
use crate::mpc::pwm::pulses;

/// Logging and integration resolution, s.
pub const LOG_STEP: i64 = 60;

/// Proportional split of a total meter reading by `design_flow · valve`.
pub fn allocate_energy(q_total: f64, valves: &[f64], design_flows: &[f64]) -> Vec<f64> {
    let weights: Vec<f64> = valves.iter().zip(design_flows).map(|(b, m)| b * m).collect();
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0.0; valves.len()];
    }
    weights.iter().map(|w| q_total * w / sum).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeSchedule {
    Fixed { mode: Mode },
    /// Heating when the previous day's mean ambient is below `threshold`.
    Auto { threshold: f64 },
}

impl Default for ModeSchedule {
    fn default() -> Self {
        ModeSchedule::Auto { threshold: 15.0 }
    }
}

/// Weather-compensated supply temperature in heating, constant in cooling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupplyCurve {
    pub heating_base: f64,
    pub heating_slope: f64,
    pub heating_min: f64,
    pub heating_max: f64,
    pub cooling: f64,
}

impl Default for SupplyCurve {
    fn default() -> Self {
        Self {
            heating_base: 38.0,
            heating_slope: 0.6,
            heating_min: 28.0,
            heating_max: 45.0,
            cooling: 16.0,
        }
    }
}

impl SupplyCurve {
    pub fn temperature(&self, mode: Mode, t_amb: f64) -> f64 {
        match mode {
            Mode::Heating => (self.heating_base - self.heating_slope * t_amb).clamp(self.heating_min, self.heating_max),
            Mode::Cooling => self.cooling,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub days: usize,
    pub control_step: i64,
    pub mode: ModeSchedule,
    pub supply: SupplyCurve,
    /// Standard deviation of additive noise on logged zone temperatures, K.
    pub noise_std: f64,
    pub initial_temperature: f64,
    pub noise_seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            days: 7,
            control_step: LOG_STEP,
            mode: ModeSchedule::default(),
            supply: SupplyCurve::default(),
            noise_std: 0.0,
            initial_temperature: 21.5,
            noise_seed: 0,
        }
    }
}

/// Everything a controller may look at when choosing the next duties.
pub struct ControlContext<'a> {
    /// Index of the first log sample the decision applies to.
    pub index: usize,
    pub time: DateTime<Utc>,
    pub mode: Mode,
    /// Current (noisy) zone temperature measurements.
    pub measured: &'a [f64],
    pub t_sup: f64,
    pub control_step: i64,
    pub plant: &'a PlantParams,
    pub weather: &'a TimeSeries,
    pub supply: &'a SupplyCurve,
    log: &'a Log,
}

impl ControlContext<'_> {
    /// The most recent `n` logged samples (fewer at the start of a run).
    pub fn history_tail(&self, n: usize) -> Result<TimeSeries> {
        self.log.tail(n, self.log.start)
    }

    /// Weather samples `[index, index + n)`, or `None` past the trace end.
    pub fn weather_ahead(&self, n: usize) -> Option<TimeSeries> {
        (self.index + n <= self.weather.len()).then(|| self.weather.slice(self.index..self.index + n))
    }
}

pub trait ValvePolicy {
    /// Per-zone duties in `[0, 1]` for the next control step.
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<Vec<f64>>;
}

impl<F> ValvePolicy for F
where
    F: FnMut(&ControlContext<'_>) -> Result<Vec<f64>>,
{
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<Vec<f64>> {
        self(ctx)
    }
}

struct Log {
    start: DateTime<Utc>,
    names: Vec<String>,
    units: Vec<Unit>,
    columns: Vec<Vec<f64>>,
}

impl Log {
    fn new(start: DateTime<Utc>, schema: &Schema, capacity: usize) -> Self {
        Self {
            start,
            names: schema.keys().cloned().collect(),
            units: schema.values().copied().collect(),
            columns: vec![Vec::with_capacity(capacity); schema.len()],
        }
    }

    fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn tail(&self, n: usize, start: DateTime<Utc>) -> Result<TimeSeries> {
        let len = self.len();
        let from = len.saturating_sub(n);
        let mut b = TimeSeries::builder(start + Duration::seconds(from as i64 * LOG_STEP), LOG_STEP);
        for ((name, unit), col) in self.names.iter().zip(&self.units).zip(&self.columns) {
            b = b.channel(name.clone(), *unit, col[from..].to_vec());
        }
        b.build()
    }
}

/// Channel layout of a simulated log for `n_zones` zones.
pub fn dataset_schema(n_zones: usize) -> Schema {
    let mut s = Schema::new();
    for z in 1..=n_zones {
        s.insert(format!("T_{z}"), Unit::Celsius);
    }
    if n_zones == 1 {
        s.insert("T_n".into(), Unit::Celsius);
    }
    for z in 1..=n_zones {
        s.insert(format!("b_{z}"), Unit::Fraction);
    }
    s.insert("T_sup".into(), Unit::Celsius);
    s.insert("T_amb".into(), Unit::Celsius);
    s.insert("I_hor".into(), Unit::WattPerSquareMeter);
    for z in 1..=n_zones {
        s.insert(format!("Q_act_{z}"), Unit::Watt);
    }
    s.insert("Q_total".into(), Unit::Watt);
    s.insert("mode".into(), Unit::Dimensionless);
    s
}

fn daily_modes(schedule: ModeSchedule, t_amb: &[f64], days: usize) -> Vec<Mode> {
    let per_day = (86_400 / LOG_STEP) as usize;
    match schedule {
        ModeSchedule::Fixed { mode } => vec![mode; days],
        ModeSchedule::Auto { threshold } => (0..days)
            .map(|d| {
                let ref_day = d.saturating_sub(1);
                let day = &t_amb[ref_day * per_day..(ref_day + 1) * per_day];
                let mean = day.iter().sum::<f64>() / day.len() as f64;
                if mean < threshold {
                    Mode::Heating
                } else {
                    Mode::Cooling
                }
            })
            .collect(),
    }
}

/// Runs `policy` against the plant for `opts.days`, logging every minute.
/// Duties are realized by PWM over one-minute sub-steps.
pub fn simulate(
    plant: &Plant,
    weather: &TimeSeries,
    opts: &SimOptions,
    policy: &mut dyn ValvePolicy,
) -> Result<TimeSeries> {
    if weather.step_secs() != LOG_STEP {
        return Err(Error::invalid(format!("weather must be sampled every {LOG_STEP}s")));
    }
    if opts.control_step <= 0 || opts.control_step % LOG_STEP != 0 || 86_400 % opts.control_step != 0 {
        return Err(Error::invalid(format!(
            "control step {}s must be a multiple of {LOG_STEP}s dividing a day",
            opts.control_step
        )));
    }
    if opts.days == 0 {
        return Err(Error::invalid("simulation needs at least one day"));
    }
    let n = opts.days * (86_400 / LOG_STEP) as usize;
    if weather.len() < n {
        return Err(Error::NotEnoughData(format!(
            "weather covers {} samples, simulation needs {n}",
            weather.len()
        )));
    }
    let params = plant.params();
    let nz = plant.n_zones();
    let t_amb = weather.channel("T_amb")?;
    let i_hor = weather.channel("I_hor")?;
    let modes = daily_modes(opts.mode, t_amb, opts.days);
    let flows = params.design_flows();
    let sub_per_control = (opts.control_step / LOG_STEP) as usize;

    let mut state = PlantState::uniform(nz, opts.initial_temperature, weather.start());
    for (i, z) in params.zones.iter().enumerate() {
        // envelope starts on the steady-state conduction profile
        let share = z.R_wall_amb / (z.R_wall_amb + z.R_zone_wall);
        state.t_wall[i] = t_amb[0] + (opts.initial_temperature - t_amb[0]) * share;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
    rng.set_stream(1);
    let noise = (opts.noise_std > 0.0).then(|| Normal::new(0.0, opts.noise_std).expect("finite noise std"));

    let schema = dataset_schema(nz);
    let mut log = Log::new(weather.start(), &schema, n);
    let mut measured = vec![0.0; nz];
    let mut on_count = vec![0usize; nz];
    let mut valves = vec![0.0; nz];

    for k in 0..n {
        let mode = modes[k / (86_400 / LOG_STEP) as usize];
        let t_sup = opts.supply.temperature(mode, t_amb[k]);
        for (m, t) in measured.iter_mut().zip(&state.t_zone) {
            *m = t + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
        }
        let pos = k % sub_per_control;
        if pos == 0 {
            let ctx = ControlContext {
                index: k,
                time: weather.time_at(k),
                mode,
                measured: &measured,
                t_sup,
                control_step: opts.control_step,
                plant: params,
                weather,
                supply: &opts.supply,
                log: &log,
            };
            let duties = policy.decide(&ctx)?;
            if duties.len() != nz {
                return Err(Error::DimensionMismatch {
                    expected: nz,
                    got: duties.len(),
                });
            }
            for (c, u) in on_count.iter_mut().zip(&duties) {
                *c = pulses(*u, sub_per_control);
            }
        }
        for (v, &c) in valves.iter_mut().zip(&on_count) {
            *v = if pos < c { 1.0 } else { 0.0 };
        }
        let w = WeatherSample {
            t_amb: t_amb[k],
            i_hor: i_hor[k],
        };
        let (next, q_act) = plant.advance(&state, &valves, t_sup, w, LOG_STEP as f64)?;
        let q_total: f64 = q_act.iter().sum();
        let alloc = allocate_energy(q_total, &valves, &flows);

        let mut c = 0;
        let mut push = |v: f64| {
            log.columns[c].push(v);
            c += 1;
        };
        measured.iter().for_each(|&m| push(m));
        if nz == 1 {
            push(params.neighbor_temperature);
        }
        valves.iter().for_each(|&b| push(b));
        push(t_sup);
        push(t_amb[k]);
        push(i_hor[k]);
        alloc.iter().for_each(|&q| push(q));
        push(q_total);
        push(mode.sign());
        state = next;
    }
    log.tail(n, weather.start())
}

/// Baseline: per-zone hysteresis with mode-dependent setpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSetpoints {
    pub heating: f64,
    pub cooling: f64,
    pub band: f64,
}

impl Default for BaselineSetpoints {
    fn default() -> Self {
        Self {
            heating: 22.0,
            cooling: 24.0,
            band: 1.0,
        }
    }
}

impl BaselineSetpoints {
    pub fn config(&self, mode: Mode) -> HysteresisConfig {
        let setpoint = match mode {
            Mode::Heating => self.heating,
            Mode::Cooling => self.cooling,
        };
        HysteresisConfig {
            setpoint,
            band: self.band,
            mode,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HysteresisPolicy {
    pub setpoints: BaselineSetpoints,
    open: Vec<bool>,
}

impl HysteresisPolicy {
    pub fn new(setpoints: BaselineSetpoints, n_zones: usize) -> Result<Self> {
        setpoints.config(Mode::Heating).validate()?;
        Ok(Self {
            setpoints,
            open: vec![false; n_zones],
        })
    }

    /// Updates zone `zone`'s switching state and returns its duty.
    pub fn zone_duty(&mut self, zone: usize, t: f64, mode: Mode) -> f64 {
        let cfg = self.setpoints.config(mode);
        self.open[zone] = hysteresis_control(t, &cfg, self.open[zone]);
        if self.open[zone] {
            1.0
        } else {
            0.0
        }
    }
}

impl ValvePolicy for HysteresisPolicy {
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<Vec<f64>> {
        Ok((0..ctx.measured.len())
            .map(|z| self.zone_duty(z, ctx.measured[z], ctx.mode))
            .collect())
    }
}

/// Independent random on/off per zone, redrawn every `hold_secs`.
#[derive(Clone, Debug)]
pub struct PrbsPolicy {
    hold_steps: usize,
    rng: ChaCha8Rng,
    current: Vec<f64>,
    calls: usize,
}

impl PrbsPolicy {
    pub fn new(hold_secs: i64, control_step: i64, n_zones: usize, seed: u64) -> Result<Self> {
        if hold_secs <= 0 || hold_secs % control_step != 0 {
            return Err(Error::invalid(format!(
                "PRBS hold {hold_secs}s must be a positive multiple of the control step {control_step}s"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Ok(Self {
            hold_steps: (hold_secs / control_step) as usize,
            rng,
            current: vec![0.0; n_zones],
            calls: 0,
        })
    }
}

impl ValvePolicy for PrbsPolicy {
    fn decide(&mut self, _ctx: &ControlContext<'_>) -> Result<Vec<f64>> {
        if self.calls % self.hold_steps == 0 {
            for v in &mut self.current {
                *v = if self.rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            }
        }
        self.calls += 1;
        Ok(self.current.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetController {
    Hysteresis(BaselineSetpoints),
    Prbs { hold_secs: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub start: DateTime<Utc>,
    pub days: usize,
    pub seed: u64,
    pub control_step: i64,
    #[serde(default)]
    pub weather: WeatherConfig,
    #[serde(default)]
    pub mode: ModeSchedule,
    #[serde(default)]
    pub supply: SupplyCurve,
    #[serde(default)]
    pub noise_std: f64,
    pub initial_temperature: f64,
}

impl DatasetOptions {
    pub fn new(start: DateTime<Utc>, days: usize, seed: u64) -> Self {
        Self {
            start,
            days,
            seed,
            control_step: LOG_STEP,
            weather: WeatherConfig::default(),
            mode: ModeSchedule::default(),
            supply: SupplyCurve::default(),
            noise_std: 0.0,
            initial_temperature: 21.5,
        }
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            days: self.days,
            control_step: self.control_step,
            mode: self.mode,
            supply: self.supply,
            noise_std: self.noise_std,
            initial_temperature: self.initial_temperature,
            noise_seed: self.seed,
        }
    }

    /// Weather for the run plus `extra_days` of look-ahead for forecasts.
    pub fn weather_trace(&self, params: &PlantParams, extra_days: usize) -> Result<TimeSeries> {
        synth_weather_with(&self.weather, self.days + extra_days, self.start, LOG_STEP, self.seed, params.site)
    }
}

/// Simulated operating log under the hysteresis baseline or a PRBS
/// excitation, at one-minute resolution.
pub fn generate_dataset(params: &PlantParams, controller: DatasetController, opts: &DatasetOptions) -> Result<TimeSeries> {
    let plant = Plant::new(params.clone())?;
    let weather = opts.weather_trace(params, 0)?;
    let sim = opts.sim_options();
    match controller {
        DatasetController::Hysteresis(sp) => {
            let mut policy = HysteresisPolicy::new(sp, plant.n_zones())?;
            simulate(&plant, &weather, &sim, &mut policy)
        }
        DatasetController::Prbs { hold_secs } => {
            let mut policy = PrbsPolicy::new(hold_secs, opts.control_step, plant.n_zones(), opts.seed)?;
            simulate(&plant, &weather, &sim, &mut policy)
        }
    }
}
