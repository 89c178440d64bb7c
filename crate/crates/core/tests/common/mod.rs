#![allow(dead_code)]

pub mod oracles;

use bldmpc_core::data::TimeSeries;
use bldmpc_core::features::{ActuatorOption, ChannelRoles, RegressorConfig, Site};
use bldmpc_core::plant::{generate_dataset, DatasetController, DatasetOptions, Mode, ModeSchedule, PlantParams};
use chrono::{DateTime, TimeZone, Utc};

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
}

pub fn month_start(year: i32, month: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, 1, 0, 0, 0).unwrap()
}

pub fn options(start: DateTime<Utc>, days: usize, seed: u64, mode: Mode) -> DatasetOptions {
    let mut o = DatasetOptions::new(start, days, seed);
    o.mode = ModeSchedule::Fixed { mode };
    if mode == Mode::Cooling {
        o.initial_temperature = 24.5;
    }
    o
}

/// PRBS-excited plant log resampled to half-hour steps.
pub fn prbs_log(params: &PlantParams, start: DateTime<Utc>, days: usize, seed: u64, mode: Mode) -> TimeSeries {
    let mut o = options(start, days, seed, mode);
    o.noise_std = 0.05;
    generate_dataset(params, DatasetController::Prbs { hold_secs: 7200 }, &o)
        .unwrap()
        .resample(1800)
        .unwrap()
}

pub fn zone_config(zone: usize, n_zones: usize, delta: usize, actuator: ActuatorOption) -> RegressorConfig {
    RegressorConfig {
        delta,
        tau: 9,
        actuator,
        roles: ChannelRoles::plant_zone(zone, n_zones),
        site: Site::default(),
    }
}
