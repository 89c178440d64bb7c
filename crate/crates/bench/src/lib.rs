//! Shared fixtures: a PRBS heating log and models trained on it, so every
//! benchmark solves the same scenario.

use chrono::{TimeZone, Utc};

use bldmpc_core::eval::BenchScenario;
use bldmpc_core::features::{ActuatorOption, ChannelRoles, RegressorConfig, Site};
use bldmpc_core::forest::ForestHyper;
use bldmpc_core::icnn::IcnnKind;
use bldmpc_core::models::{train_zone, ModelKind, ZoneModel};
use bldmpc_core::mpc::MpcConfig;
use bldmpc_core::plant::{generate_dataset, DatasetController, DatasetOptions, Mode, ModeSchedule, PlantParams};
use bldmpc_core::TimeSeries;

pub const HORIZON: usize = 14;

/// Eight weeks of PRBS-excited heating at half-hour resolution.
pub fn training_log() -> TimeSeries {
    let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let mut opts = DatasetOptions::new(start, 56, 11);
    opts.mode = ModeSchedule::Fixed { mode: Mode::Heating };
    opts.noise_std = 0.05;
    generate_dataset(&PlantParams::default(), DatasetController::Prbs { hold_secs: 7200 }, &opts)
        .expect("default plant simulates")
        .resample(1800)
        .expect("minute log resamples to half hours")
}

pub fn zone_config() -> RegressorConfig {
    RegressorConfig {
        delta: 3,
        tau: 9,
        actuator: ActuatorOption::MeasuredEnergy,
        roles: ChannelRoles::plant_zone(0, 2),
        site: Site::default(),
    }
}

pub fn model_kinds() -> Vec<(&'static str, ModelKind)> {
    vec![
        ("armax", ModelKind::Armax { nonneg: true }),
        ("rf", ModelKind::Rf { hyper: ForestHyper::default() }),
        (
            "picnn",
            ModelKind::Icnn {
                kind: IcnnKind::Picnn,
                arch: Default::default(),
                train: Default::default(),
            },
        ),
    ]
}

pub fn train(kind: &ModelKind, log: &TimeSeries) -> ZoneModel {
    train_zone(kind, std::slice::from_ref(log), &zone_config(), HORIZON).expect("fixture trains")
}

/// Solve origin in the middle of the log with the default heating config.
pub fn scenario(log: &TimeSeries) -> BenchScenario<'_> {
    BenchScenario {
        frame_data: log,
        now: log.len() / 2,
        config: MpcConfig {
            horizon: HORIZON,
            ..MpcConfig::default()
        },
    }
}
