//! Channel roles, actuator-input options and the lagged regressor layout
//! shared by the ARMAX model and the MPC problem builder.

use chrono::Datelike;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::solar::{self, OneHotSolarConfig};

/// How the heating/cooling drive enters the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorOption {
    /// Per-zone power allocated from the total meter by design flows.
    MeasuredEnergy,
    /// Valve opening only; the mode sign is applied by the regressor.
    ValveOnly,
    /// Valve opening times supply-minus-room temperature.
    ValveTimesDt,
}

impl ActuatorOption {
    pub const ALL: [ActuatorOption; 3] = [
        ActuatorOption::MeasuredEnergy,
        ActuatorOption::ValveOnly,
        ActuatorOption::ValveTimesDt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActuatorOption::MeasuredEnergy => "measured_energy",
            ActuatorOption::ValveOnly => "valve_only",
            ActuatorOption::ValveTimesDt => "valve_times_dt",
        }
    }
}

impl std::str::FromStr for ActuatorOption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActuatorOption::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown actuator option `{s}`")))
    }
}

/// Scalar actuator drive for one sample. `t_bar` stands in for the room
/// temperature to keep the valve·ΔT product linear in the decision.
pub fn actuator_input(
    option: ActuatorOption,
    b: f64,
    t_sup: Option<f64>,
    t_bar: f64,
    energy: Option<f64>,
) -> Result<f64> {
    match option {
        ActuatorOption::ValveOnly => Ok(b),
        ActuatorOption::ValveTimesDt => {
            let t_sup = t_sup.ok_or(Error::MissingSupplyTemperature)?;
            Ok(b * (t_sup - t_bar))
        }
        ActuatorOption::MeasuredEnergy => energy.ok_or_else(|| Error::MissingChannel("energy".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub latitude: f64,
    pub longitude: f64,
}

impl Default for Site {
    /// Dübendorf, Switzerland.
    fn default() -> Self {
        Self {
            latitude: 47.4,
            longitude: 8.6,
        }
    }
}

/// Which dataset columns play which role for one zone model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRoles {
    pub output: String,
    pub neighbors: Vec<String>,
    pub ambient: String,
    pub irradiance: String,
    pub valve: String,
    #[serde(default)]
    pub supply_temperature: Option<String>,
    #[serde(default)]
    pub energy: Option<String>,
    /// `+1` heating, `-1` cooling. Absent means heating throughout.
    #[serde(default)]
    pub mode: Option<String>,
}

impl ChannelRoles {
    /// Roles for zone `zone` (0-based) of a dataset produced by the plant
    /// simulator; every other zone is a neighbor. A single-zone plant logs
    /// its fixed neighbor boundary as `T_n`.
    pub fn plant_zone(zone: usize, n_zones: usize) -> Self {
        let neighbors = if n_zones > 1 {
            (0..n_zones)
                .filter(|&z| z != zone)
                .map(|z| format!("T_{}", z + 1))
                .collect()
        } else {
            vec!["T_n".to_string()]
        };
        Self {
            output: format!("T_{}", zone + 1),
            neighbors,
            ambient: "T_amb".into(),
            irradiance: "I_hor".into(),
            valve: format!("b_{}", zone + 1),
            supply_temperature: Some("T_sup".into()),
            energy: Some(format!("Q_act_{}", zone + 1)),
            mode: Some("mode".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub delta: usize,
    pub tau: usize,
    pub actuator: ActuatorOption,
    pub roles: ChannelRoles,
    #[serde(default)]
    pub site: Site,
}

impl RegressorConfig {
    pub fn layout(&self) -> Layout {
        Layout {
            delta: self.delta,
            n_neighbors: self.roles.neighbors.len(),
            tau: self.tau,
        }
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.layout().width()
    }
}

/// Column layout of a regression row: blocks of `delta + 1` lags (lag 0
/// first) for output, actuator, ambient, each neighbor, and each solar bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub delta: usize,
    pub n_neighbors: usize,
    pub tau: usize,
}

impl Layout {
    pub fn lags(&self) -> usize {
        self.delta + 1
    }

    pub fn width(&self) -> usize {
        self.lags() * (3 + self.n_neighbors + self.tau)
    }

    pub fn output(&self, lag: usize) -> usize {
        lag
    }

    pub fn actuator(&self, lag: usize) -> usize {
        self.lags() + lag
    }

    pub fn ambient(&self, lag: usize) -> usize {
        2 * self.lags() + lag
    }

    pub fn neighbor(&self, j: usize, lag: usize) -> usize {
        (3 + j) * self.lags() + lag
    }

    pub fn solar(&self, bin: usize, lag: usize) -> usize {
        (3 + self.n_neighbors + bin) * self.lags() + lag
    }
}

/// Per-sample features extracted once from a series; rows and open-loop
/// inputs are assembled from it.
#[derive(Clone, Debug)]
pub struct FeatureFrame {
    pub y: Vec<f64>,
    pub valve: Vec<f64>,
    pub ambient: Vec<f64>,
    pub neighbors: Vec<Vec<f64>>,
    pub i_hor: Vec<f64>,
    pub i_vert: Vec<f64>,
    pub bin: Vec<usize>,
    pub tod: Vec<f64>,
    /// Fraction of the year elapsed at the sample midpoint, `[0, 1)`.
    pub season: Vec<f64>,
    pub t_sup: Option<Vec<f64>>,
    pub energy: Option<Vec<f64>>,
    pub sign: Vec<f64>,
    actuator: ActuatorOption,
    layout: Layout,
}

impl FeatureFrame {
    pub fn new(ts: &TimeSeries, cfg: &RegressorConfig) -> Result<Self> {
        let roles = &cfg.roles;
        let y = ts.channel(&roles.output)?.to_vec();
        let valve = ts.channel(&roles.valve)?.to_vec();
        let ambient = ts.channel(&roles.ambient)?.to_vec();
        let neighbors = roles
            .neighbors
            .iter()
            .map(|n| ts.channel(n).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        let i_hor = ts.channel(&roles.irradiance)?.to_vec();
        let t_sup = match &roles.supply_temperature {
            Some(name) if ts.has_channel(name) => Some(ts.channel(name)?.to_vec()),
            _ => None,
        };
        if cfg.actuator == ActuatorOption::ValveTimesDt && t_sup.is_none() {
            return Err(Error::MissingSupplyTemperature);
        }
        let energy = match &roles.energy {
            Some(name) if ts.has_channel(name) => Some(ts.channel(name)?.to_vec()),
            Some(name) if cfg.actuator == ActuatorOption::MeasuredEnergy => {
                return Err(Error::MissingChannel(name.clone()))
            }
            None if cfg.actuator == ActuatorOption::MeasuredEnergy => {
                return Err(Error::MissingChannel("energy".into()))
            }
            _ => None,
        };
        let sign = match &roles.mode {
            Some(name) if ts.has_channel(name) => ts
                .channel(name)?
                .iter()
                .map(|&m| if m < 0.0 { -1.0 } else { 1.0 })
                .collect(),
            _ => vec![1.0; ts.len()],
        };
        let onehot = OneHotSolarConfig::new(cfg.tau);
        let mut i_vert = Vec::with_capacity(ts.len());
        let mut bin = Vec::with_capacity(ts.len());
        let mut tod = Vec::with_capacity(ts.len());
        let mut season = Vec::with_capacity(ts.len());
        for k in 0..ts.len() {
            let mid = ts.mid_time(k);
            season.push((f64::from(mid.ordinal0()) + ts.time_of_day(k) / 86_400.0) / 365.25);
            let geom = solar::solar_position(mid, cfg.site.latitude, cfg.site.longitude);
            i_vert.push(solar::vertical_irradiance(i_hor[k], geom.beta));
            let t = ts.time_of_day(k);
            bin.push(onehot.bin(t));
            tod.push(t);
        }
        Ok(Self {
            y,
            valve,
            ambient,
            neighbors,
            i_hor,
            i_vert,
            bin,
            tod,
            season,
            t_sup,
            energy,
            sign,
            actuator: cfg.actuator,
            layout: cfg.layout(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Actuator drive at sample `i` with the room temperature approximated
    /// by `t_bar`.
    pub fn actuator_at(&self, i: usize, t_bar: f64) -> f64 {
        let t_sup = self.t_sup.as_ref().map(|v| v[i]);
        let energy = self.energy.as_ref().map(|v| v[i]);
        let u = actuator_input(self.actuator, self.valve[i], t_sup, t_bar, energy)
            .expect("frame construction checked actuator channels");
        match self.actuator {
            ActuatorOption::ValveOnly => self.sign[i] * u,
            _ => u,
        }
    }

    /// Model-input units per unit valve duty at sample `i`, for a prediction
    /// made at `now`. `energy_gain` converts valve·ΔT into power when the
    /// model was trained on measured energy.
    pub fn actuator_gain(&self, i: usize, now: usize, energy_gain: f64) -> f64 {
        let dt = || self.t_sup.as_ref().map(|v| v[i] - self.y[now]);
        match self.actuator {
            ActuatorOption::ValveOnly => self.sign[i],
            ActuatorOption::ValveTimesDt => dt().unwrap_or(0.0),
            ActuatorOption::MeasuredEnergy => match dt() {
                Some(d) => energy_gain * d,
                None => energy_gain * self.sign[i],
            },
        }
    }

    /// Exogenous (non-output) part of the row for sample `i` at lag `lag`,
    /// with the actuator value supplied by the caller.
    fn write_exogenous(&self, i: usize, lag: usize, u: f64, out: &mut [f64]) {
        let l = self.layout;
        out[l.actuator(lag)] = u;
        out[l.ambient(lag)] = self.ambient[i];
        for (j, nb) in self.neighbors.iter().enumerate() {
            out[l.neighbor(j, lag)] = nb[i];
        }
        for b in 0..l.tau {
            out[l.solar(b, lag)] = 0.0;
        }
        out[l.solar(self.bin[i], lag)] = self.i_vert[i];
    }

    /// Regression row predicting `y[k + 1]` from measured data.
    pub fn row_into(&self, k: usize, out: &mut [f64]) {
        let l = self.layout;
        for lag in 0..l.lags() {
            let i = k - lag;
            out[l.output(lag)] = self.y[i];
            self.write_exogenous(i, lag, self.actuator_at(i, self.y[i]), out);
        }
    }

    /// Exogenous row entries for an open-loop step where the caller supplies
    /// outputs and actuator values; used by recursive prediction.
    pub fn exogenous_into(&self, i: usize, lag: usize, u: f64, out: &mut [f64]) {
        self.write_exogenous(i, lag, u, out);
    }
}

/// Stacks regression rows `(X, y)` over every admissible index of every
/// segment. Row count per segment is `len − δ − 1`.
pub fn build_regression_rows(ts: &TimeSeries, cfg: &RegressorConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    build_regression_rows_segments(std::slice::from_ref(ts), cfg)
}

pub fn build_regression_rows_segments(
    segments: &[TimeSeries],
    cfg: &RegressorConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let layout = cfg.layout();
    let lags = layout.lags();
    let mut frames = Vec::with_capacity(segments.len());
    for ts in segments {
        if ts.len() <= lags {
            return Err(Error::TooShort {
                needed: lags + 1,
                have: ts.len(),
            });
        }
        frames.push(FeatureFrame::new(ts, cfg)?);
    }
    let rows: usize = frames.iter().map(|f| f.len() - lags).sum();
    let width = layout.width();
    let mut x = DMatrix::zeros(rows, width);
    let mut y = DVector::zeros(rows);
    let mut buf = vec![0.0; width];
    let mut r = 0;
    for f in &frames {
        for k in layout.delta..f.len() - 1 {
            f.row_into(k, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                x[(r, c)] = *v;
            }
            y[r] = f.y[k + 1];
            r += 1;
        }
    }
    Ok((x, y))
}

/// Least-squares gain through the origin from valve·(T_sup − T) to the
/// allocated energy channel.
pub fn fit_energy_gain(segments: &[TimeSeries], config: &RegressorConfig) -> Result<f64> {
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for ts in segments {
        let frame = FeatureFrame::new(ts, config)?;
        let (Some(t_sup), Some(q)) = (&frame.t_sup, &frame.energy) else {
            continue;
        };
        for i in 0..frame.len() {
            let x = frame.valve[i] * (t_sup[i] - frame.y[i]);
            sxy += x * q[i];
            sxx += x * x;
        }
    }
    Ok(if sxx > 0.0 { sxy / sxx } else { 0.0 })
}
