//! Ground-truth multi-zone RC thermal simulator.
//!
//! Each zone is a 2R2C network: an air/furniture node coupled to a hidden
//! envelope node, which in turn couples to ambient. Zones exchange heat
//! directly through `R_zone_neighbor`. Windows add solar gains to the air
//! node and water panels add `panel_UA·b·(T_sup − T_zone)`.

mod dataset;
mod hysteresis;
mod weather;

pub use dataset::{
    allocate_energy, dataset_schema, generate_dataset, simulate, BaselineSetpoints, ControlContext,
    DatasetController, DatasetOptions, HysteresisPolicy, ModeSchedule, PrbsPolicy, SimOptions, SupplyCurve,
    ValvePolicy, LOG_STEP,
};
pub use hysteresis::{hysteresis_control, Hysteresis, HysteresisConfig};
pub use weather::{synth_weather, synth_weather_with, WeatherConfig};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Site;
use crate::solar;

/// Longest explicit-Euler step accepted by [`Plant::step`].
pub const MAX_INNER_STEP: f64 = 60.0;

/// Plausibility band for any simulated temperature.
pub const SANITY_BAND: (f64, f64) = (-20.0, 60.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Heating,
    Cooling,
}

impl Mode {
    /// `+1` for heating, `-1` for cooling.
    pub fn sign(self) -> f64 {
        match self {
            Mode::Heating => 1.0,
            Mode::Cooling => -1.0,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heating" => Ok(Mode::Heating),
            "cooling" => Ok(Mode::Cooling),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneParams {
    /// Capacitance of air, furniture and interior surfaces, J/K.
    pub C_zone: f64,
    /// Envelope capacitance, J/K.
    pub C_wall: f64,
    pub R_zone_wall: f64,
    pub R_wall_amb: f64,
    pub R_zone_neighbor: f64,
    /// Effective window area, m².
    pub A_win: f64,
    /// Window orientation offset; gains peak at sun azimuth `alpha0 + 90°`.
    pub alpha0: f64,
    /// Panel heat transfer at full valve opening, W/K.
    pub panel_UA: f64,
    /// Design mass flow of the zone's panel circuit, kg/s.
    pub design_flow: f64,
}

impl ZoneParams {
    fn validate(&self, zone: usize) -> Result<()> {
        let fields = [
            ("C_zone", self.C_zone),
            ("C_wall", self.C_wall),
            ("R_zone_wall", self.R_zone_wall),
            ("R_wall_amb", self.R_wall_amb),
            ("R_zone_neighbor", self.R_zone_neighbor),
            ("A_win", self.A_win),
            ("panel_UA", self.panel_UA),
            ("design_flow", self.design_flow),
        ];
        for (name, v) in fields {
            // panel_UA = 0 decouples the actuator, which tests rely on
            let ok = if name == "panel_UA" { v >= 0.0 } else { v > 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::invalid(format!("zones[{zone}].{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Slowest time constant of the zone's path to ambient with the
    /// actuator closed, in hours.
    pub fn time_constant_hours(&self) -> f64 {
        (self.C_zone + self.C_wall) * (self.R_zone_wall + self.R_wall_amb) / 3600.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub zones: Vec<ZoneParams>,
    #[serde(default)]
    pub site: Site,
    /// Boundary temperature seen by a single-zone plant's neighbor path.
    #[serde(default = "default_neighbor_temperature")]
    pub neighbor_temperature: f64,
}

fn default_neighbor_temperature() -> f64 {
    21.0
}

impl Default for PlantParams {
    /// Two bedrooms: zone 1 with an exposed envelope, zone 2 better
    /// insulated, sharing a partition wall.
    fn default() -> Self {
        let zone1 = ZoneParams {
            C_zone: 4.0e6,
            C_wall: 2.5e6,
            R_zone_wall: 0.005,
            R_wall_amb: 0.015,
            R_zone_neighbor: 0.02,
            A_win: 2.5,
            alpha0: 45.0,
            panel_UA: 100.0,
            design_flow: 0.05,
        };
        let zone2 = ZoneParams {
            C_wall: 1.0e6,
            R_wall_amb: 0.022,
            design_flow: 0.04,
            ..zone1.clone()
        };
        Self {
            zones: vec![zone1, zone2],
            site: Site::default(),
            neighbor_temperature: default_neighbor_temperature(),
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        if self.zones.is_empty() {
            return Err(Error::invalid("plant needs at least one zone"));
        }
        for (i, z) in self.zones.iter().enumerate() {
            z.validate(i)?;
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: PlantParams = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn design_flows(&self) -> Vec<f64> {
        self.zones.iter().map(|z| z.design_flow).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub t_zone: Vec<f64>,
    pub t_wall: Vec<f64>,
    pub time: DateTime<Utc>,
}

impl PlantState {
    /// All nodes at `temperature`.
    pub fn uniform(n_zones: usize, temperature: f64, time: DateTime<Utc>) -> Self {
        Self {
            t_zone: vec![temperature; n_zones],
            t_wall: vec![temperature; n_zones],
            time,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeatherSample {
    pub t_amb: f64,
    pub i_hor: f64,
}

/// Heat flows into each node over one step, W.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepFlows {
    pub q_act: Vec<f64>,
    pub q_sol: Vec<f64>,
    pub q_neighbor: Vec<f64>,
    pub q_zone_wall: Vec<f64>,
    pub q_wall_amb: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Plant {
    params: PlantParams,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn n_zones(&self) -> usize {
        self.params.zones.len()
    }

    /// Temperature seen through zone `i`'s neighbor path.
    fn neighbor_temperature(&self, t_zone: &[f64], i: usize) -> f64 {
        let n = t_zone.len();
        if n == 1 {
            self.params.neighbor_temperature
        } else {
            t_zone.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, t)| t).sum::<f64>() / (n - 1) as f64
        }
    }

    /// Solar gain into each zone for the step starting at `time`.
    pub fn solar_gains(&self, time: DateTime<Utc>, dt: f64, i_hor: f64) -> Vec<f64> {
        let mid = time + Duration::milliseconds((dt * 500.0) as i64);
        let site = self.params.site;
        let geom = solar::solar_position(mid, site.latitude, site.longitude);
        self.params
            .zones
            .iter()
            .map(|z| solar::window_gain(i_hor, &geom, z.A_win, z.alpha0))
            .collect()
    }

    /// One explicit-Euler step of at most [`MAX_INNER_STEP`] seconds.
    pub fn step(
        &self,
        state: &PlantState,
        valves: &[f64],
        t_sup: f64,
        weather: WeatherSample,
        dt: f64,
    ) -> Result<(PlantState, StepFlows)> {
        if !(dt > 0.0 && dt <= MAX_INNER_STEP) {
            return Err(Error::invalid(format!("inner step {dt}s outside (0, {MAX_INNER_STEP}]")));
        }
        let n = self.n_zones();
        if valves.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: valves.len(),
            });
        }
        let q_sol = self.solar_gains(state.time, dt, weather.i_hor);
        let mut next = state.clone();
        let mut flows = StepFlows {
            q_act: Vec::with_capacity(n),
            q_sol,
            q_neighbor: Vec::with_capacity(n),
            q_zone_wall: Vec::with_capacity(n),
            q_wall_amb: Vec::with_capacity(n),
        };
        for (i, z) in self.params.zones.iter().enumerate() {
            let tz = state.t_zone[i];
            let tw = state.t_wall[i];
            let q_act = z.panel_UA * valves[i] * (t_sup - tz);
            let q_nb = (self.neighbor_temperature(&state.t_zone, i) - tz) / z.R_zone_neighbor;
            let q_zw = (tw - tz) / z.R_zone_wall;
            let q_wa = (weather.t_amb - tw) / z.R_wall_amb;
            next.t_zone[i] = tz + dt * (q_zw + q_nb + flows.q_sol[i] + q_act) / z.C_zone;
            next.t_wall[i] = tw + dt * (q_wa - q_zw) / z.C_wall;
            flows.q_act.push(q_act);
            flows.q_neighbor.push(q_nb);
            flows.q_zone_wall.push(q_zw);
            flows.q_wall_amb.push(q_wa);
        }
        next.time = state.time + Duration::milliseconds((dt * 1000.0).round() as i64);
        for &t in next.t_zone.iter().chain(&next.t_wall) {
            if !(SANITY_BAND.0..=SANITY_BAND.1).contains(&t) {
                return Err(Error::UnstableStep {
                    value: t,
                    time: next.time.to_rfc3339(),
                });
            }
        }
        Ok((next, flows))
    }

    /// Integrates over `duration` seconds with equal sub-steps of at most
    /// [`MAX_INNER_STEP`]; returns the time-averaged actuator power per zone.
    pub fn advance(
        &self,
        state: &PlantState,
        valves: &[f64],
        t_sup: f64,
        weather: WeatherSample,
        duration: f64,
    ) -> Result<(PlantState, Vec<f64>)> {
        let n_sub = (duration / MAX_INNER_STEP).ceil().max(1.0) as usize;
        let dt = duration / n_sub as f64;
        let mut s = state.clone();
        let mut q = vec![0.0; self.n_zones()];
        for _ in 0..n_sub {
            let (next, flows) = self.step(&s, valves, t_sup, weather, dt)?;
            for (acc, f) in q.iter_mut().zip(&flows.q_act) {
                *acc += f / n_sub as f64;
            }
            s = next;
        }
        Ok((s, q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 1, 15, 0, 0, 0).unwrap()
    }

    fn single_zone() -> Plant {
        let mut p = PlantParams::default();
        p.zones.truncate(1);
        Plant::new(p).unwrap()
    }

    #[test]
    fn default_time_constants_are_lightweight() {
        for z in &PlantParams::default().zones {
            let tau = z.time_constant_hours();
            assert!((20.0..=40.0).contains(&tau), "tau = {tau} h");
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let plant = Plant::new(PlantParams::default()).unwrap();
        let s = PlantState::uniform(2, 12.0, t0());
        let w = WeatherSample { t_amb: 12.0, i_hor: 0.0 };
        let (next, _) = plant.advance(&s, &[0.0, 0.0], 35.0, w, 3600.0).unwrap();
        for (a, b) in next.t_zone.iter().zip(&s.t_zone) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zone_cools_towards_cold_ambient() {
        let plant = single_zone();
        let s = PlantState::uniform(1, 21.0, t0());
        let w = WeatherSample { t_amb: 0.0, i_hor: 0.0 };
        let mut prev = s.clone();
        // the zone lags the wall by one step before it starts to fall
        let (s1, _) = plant.step(&prev, &[0.0], 35.0, w, 60.0).unwrap();
        prev = s1;
        for _ in 0..120 {
            let (next, _) = plant.step(&prev, &[0.0], 35.0, w, 60.0).unwrap();
            assert!(next.t_zone[0] < prev.t_zone[0]);
            prev = next;
        }
    }

    /// Fine-step (1 s) reference integration of the same ODE.
    fn reference(z: &ZoneParams, t_nb: f64, mut tz: f64, mut tw: f64, b: f64, t_sup: f64, t_amb: f64, q_sol: f64, secs: usize) -> f64 {
        for _ in 0..secs {
            let q_zw = (tw - tz) / z.R_zone_wall;
            let dz = (q_zw + (t_nb - tz) / z.R_zone_neighbor + q_sol + z.panel_UA * b * (t_sup - tz)) / z.C_zone;
            let dw = ((t_amb - tw) / z.R_wall_amb - q_zw) / z.C_wall;
            tz += dz;
            tw += dw;
        }
        tz
    }

    #[test]
    fn matches_fine_step_reference() {
        let plant = single_zone();
        let z = plant.params().zones[0].clone();
        let mut s = PlantState::uniform(1, 20.0, t0());
        s.t_wall[0] = 15.0;
        let w = WeatherSample { t_amb: 2.0, i_hor: 0.0 };
        let (out, _) = plant.advance(&s, &[0.7], 38.0, w, 3600.0).unwrap();
        let want = reference(&z, 21.0, 20.0, 15.0, 0.7, 38.0, 2.0, 0.0, 3600);
        assert!((out.t_zone[0] - want).abs() < 0.01, "{} vs {want}", out.t_zone[0]);
    }

    #[test]
    fn energy_is_conserved_per_step() {
        let plant = Plant::new(PlantParams::default()).unwrap();
        let mut s = PlantState::uniform(2, 21.0, Utc.with_ymd_and_hms(2020, 4, 1, 10, 0, 0).unwrap());
        s.t_wall = vec![14.0, 17.0];
        s.t_zone = vec![21.0, 22.5];
        let w = WeatherSample { t_amb: 3.0, i_hor: 450.0 };
        let (next, f) = plant.step(&s, &[1.0, 0.3], 36.0, w, 60.0).unwrap();
        for (i, z) in plant.params().zones.iter().enumerate() {
            let stored = z.C_zone * (next.t_zone[i] - s.t_zone[i]) + z.C_wall * (next.t_wall[i] - s.t_wall[i]);
            let net = 60.0 * (f.q_act[i] + f.q_sol[i] + f.q_neighbor[i] + f.q_wall_amb[i]);
            assert!((stored - net).abs() <= 1e-6 * net.abs().max(stored.abs()), "{stored} vs {net}");
        }
        assert!(f.q_sol.iter().all(|&q| q > 0.0));
    }

    #[test]
    fn converges_monotonically_to_ambient_without_gains() {
        let plant = single_zone();
        let mut p = plant.params().clone();
        p.neighbor_temperature = 5.0;
        let plant = Plant::new(p).unwrap();
        let mut s = PlantState::uniform(1, 22.0, t0());
        let w = WeatherSample { t_amb: 5.0, i_hor: 0.0 };
        let mut prev_gap = f64::INFINITY;
        for _ in 0..(24 * 20) {
            let (next, _) = plant.advance(&s, &[0.0], 35.0, w, 3600.0).unwrap();
            let gap = next.t_zone[0] - 5.0;
            assert!(gap <= prev_gap + 1e-12 && gap >= 0.0);
            prev_gap = gap;
            s = next;
        }
        assert!(prev_gap < 0.5);
    }

    #[test]
    fn ambient_response_is_affine() {
        // superposition: response to (a1 + a2) minus response to a2 equals
        // response to a1 minus the zero-input response
        let mut p = PlantParams::default();
        p.zones.truncate(1);
        p.zones[0].panel_UA = 0.0;
        let plant = Plant::new(p).unwrap();
        let run = |amb: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut s = PlantState::uniform(1, 20.0, t0());
            (0..200)
                .map(|k| {
                    let w = WeatherSample { t_amb: amb(k), i_hor: 0.0 };
                    s = plant.step(&s, &[0.0], 35.0, w, 60.0).unwrap().0;
                    s.t_zone[0]
                })
                .collect()
        };
        let a1 = |k: usize| (k as f64 * 0.1).sin() * 5.0;
        let a2 = |k: usize| 3.0 + (k % 7) as f64;
        let both = run(&|k| a1(k) + a2(k));
        let only1 = run(&a1);
        let only2 = run(&a2);
        let zero = run(&|_| 0.0);
        for k in 0..200 {
            let lhs = both[k] - only2[k];
            let rhs = only1[k] - zero[k];
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn unstable_step_is_reported() {
        let plant = single_zone();
        let s = PlantState::uniform(1, 59.99, t0());
        let w = WeatherSample { t_amb: 59.99, i_hor: 0.0 };
        let err = plant.step(&s, &[1.0], 400.0, w, 60.0).unwrap_err();
        assert!(matches!(err, Error::UnstableStep { .. }));
        assert!(plant.step(&s, &[0.0], 35.0, w, 120.0).is_err());
    }
}
