mod common;

use bldmpc_core::armax::{ArmaxModel, TrainingStats};
use bldmpc_core::data::{TimeSeries, Unit};
use bldmpc_core::features::{ActuatorOption, ChannelRoles, FeatureFrame, RegressorConfig, Site};
use bldmpc_core::models::{train_zone, ModelBundle, ModelKind};
use bldmpc_core::mpc::{
    closed_loop, solve_affine_mpc, ClosedLoopRun, ComfortSchedule, Controller, ForecastError, MpcConfig,
};
use bldmpc_core::plant::{generate_dataset, BaselineSetpoints, DatasetController, Mode, PlantParams};

fn armax_bundle(params: &PlantParams, mode: Mode, days: usize) -> ModelBundle {
    let start = if mode == Mode::Heating {
        common::month_start(2023, 1)
    } else {
        common::month_start(2023, 7)
    };
    let log = common::prbs_log(params, start, days, 11, mode);
    let nz = params.n_zones();
    let zones = (0..nz)
        .map(|z| {
            let cfg = common::zone_config(z, nz, 3, ActuatorOption::MeasuredEnergy);
            train_zone(&ModelKind::Armax { nonneg: true }, &[log.clone()], &cfg, 14).unwrap()
        })
        .collect();
    ModelBundle { zones }
}

/// Fallbacks caused by a failed solve; the first control steps of a run
/// always fall back while the controller accumulates history.
fn solver_failures(run: &ClosedLoopRun) -> usize {
    run.steps
        .iter()
        .filter(|r| r.fallback.as_deref().is_some_and(|f| !f.starts_with("not enough data")))
        .count()
}

/// The run from the first step planned by MPC onwards.
fn after_warm_up(run: &ClosedLoopRun) -> ClosedLoopRun {
    let first = run.steps.iter().find(|r| r.fallback.is_none()).expect("MPC planned at least once").index;
    ClosedLoopRun {
        log: run.log.slice(first..run.log.len()),
        steps: run.steps.iter().filter(|r| r.index >= first).cloned().collect(),
    }
}

#[test]
fn hysteresis_run_reproduces_the_dataset_generator() {
    let params = PlantParams::default();
    let mut opts = common::options(common::month_start(2023, 2), 3, 9, Mode::Heating);
    opts.noise_std = 0.05;
    let sp = BaselineSetpoints::default();
    let direct = generate_dataset(&params, DatasetController::Hysteresis(sp), &opts).unwrap();
    let run = closed_loop(&params, &Controller::Hysteresis(sp), &opts, ForecastError::None).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    direct.write_csv(&mut a).unwrap();
    run.log.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    assert!(run.steps.is_empty());
}

/// Single-zone series with the channels a valve-only ARMAX model reads.
struct LinearZone {
    start: chrono::DateTime<chrono::Utc>,
    y: Vec<f64>,
    valve: Vec<f64>,
    ambient: Vec<f64>,
    neighbor: Vec<f64>,
    i_hor: Vec<f64>,
}

impl LinearZone {
    fn series(&self) -> TimeSeries {
        TimeSeries::builder(self.start, 1800)
            .channel("T_1", Unit::Celsius, self.y.clone())
            .channel("T_n", Unit::Celsius, self.neighbor.clone())
            .channel("T_amb", Unit::Celsius, self.ambient.clone())
            .channel("I_hor", Unit::WattPerSquareMeter, self.i_hor.clone())
            .channel("b_1", Unit::Fraction, self.valve.clone())
            .build()
            .unwrap()
    }
}

fn linear_config() -> RegressorConfig {
    RegressorConfig {
        delta: 1,
        tau: 9,
        actuator: ActuatorOption::ValveOnly,
        roles: ChannelRoles {
            output: "T_1".into(),
            neighbors: vec!["T_n".into()],
            ambient: "T_amb".into(),
            irradiance: "I_hor".into(),
            valve: "b_1".into(),
            supply_temperature: None,
            energy: None,
            mode: None,
        },
        site: Site::default(),
    }
}

#[test]
fn perfect_model_realizes_the_planned_first_step() {
    let cfg = linear_config();
    let layout = cfg.layout();
    let mut theta = vec![0.0; layout.width()];
    theta[layout.output(0)] = 0.82;
    theta[layout.output(1)] = 0.08;
    theta[layout.actuator(0)] = 1.0;
    theta[layout.actuator(1)] = 0.3;
    theta[layout.ambient(0)] = 0.04;
    theta[layout.ambient(1)] = 0.01;
    theta[layout.neighbor(0, 0)] = 0.05;
    for b in 0..cfg.tau {
        theta[layout.solar(b, 0)] = 0.002;
    }
    let model = ArmaxModel {
        theta,
        config: cfg.clone(),
        nonneg: true,
        training_stats: TrainingStats {
            rows: 0,
            residual_norm: 0.0,
        },
        step_secs: 1800,
        energy_gain: None,
    };

    let mpc = MpcConfig {
        horizon: 10,
        comfort: ComfortSchedule::constant(21.0, 22.0),
        ..MpcConfig::default()
    };
    let steps = 96;
    let len = 2 + steps + mpc.horizon;
    let mut zone = LinearZone {
        start: common::month_start(2023, 3),
        y: vec![19.0; len],
        valve: vec![0.0; len],
        ambient: (0..len).map(|k| 5.0 + 4.0 * (k as f64 * 0.13).sin()).collect(),
        neighbor: vec![20.0; len],
        i_hor: (0..len).map(|k| (300.0 * (k as f64 * 0.26).sin()).max(0.0)).collect(),
    };
    let mut worst: f64 = 0.0;
    for now in 1..1 + steps {
        let frame = FeatureFrame::new(&zone.series(), &cfg).unwrap();
        let gains = vec![1.0; mpc.horizon];
        let dynamics = model.affine_dynamics(&frame, now, mpc.horizon, &gains).unwrap();
        let bounds = vec![(21.0, 22.0); mpc.horizon];
        let plan = solve_affine_mpc(&dynamics, &bounds, &mpc).unwrap();
        zone.valve[now] = plan.u[0];

        // the plant: the same linear law evaluated on the measured row
        let frame = FeatureFrame::new(&zone.series(), &cfg).unwrap();
        let mut row = vec![0.0; layout.width()];
        frame.row_into(now, &mut row);
        let realized: f64 = row.iter().zip(&model.theta).map(|(a, b)| a * b).sum();
        zone.y[now + 1] = realized;
        worst = worst.max((realized - plan.y[0]).abs());
    }
    assert!(worst <= 1e-6, "first-step mismatch {worst:e}");
    // the controller must actually have steered into the band
    assert!(zone.y[steps - 10..steps].iter().all(|&t| t > 20.9 && t < 22.1), "{:?}", &zone.y[steps - 10..steps]);
}

#[test]
fn larger_slack_weight_does_not_add_violation() {
    let params = PlantParams::default();
    let models = armax_bundle(&params, Mode::Heating, 28);
    for seed in [1, 2, 3] {
        let opts = common::options(common::month_start(2024, 1), 4, seed, Mode::Heating);
        let mut previous = f64::INFINITY;
        for lambda in [1.0, 10.0, 100.0] {
            let config = MpcConfig {
                lambda,
                ..MpcConfig::default()
            };
            let comfort = config.comfort.clone();
            let controller = Controller::Mpc {
                models: models.clone(),
                config,
                fallback: BaselineSetpoints::default(),
            };
            let run = closed_loop(&params, &controller, &opts, ForecastError::None).unwrap();
            assert_eq!(solver_failures(&run), 0);
            let s = run.summary(&comfort).unwrap();
            assert!(
                s.violation_kh <= previous + 1e-9,
                "seed {seed} lambda {lambda}: {} > {previous}",
                s.violation_kh
            );
            previous = s.violation_kh;
        }
    }
}

#[test]
fn noisy_forecasts_complete_without_fallback() {
    let params = PlantParams::default();
    let models = armax_bundle(&params, Mode::Heating, 28);
    let opts = common::options(common::month_start(2024, 2), 7, 4, Mode::Heating);
    let controller = Controller::Mpc {
        models,
        config: MpcConfig::default(),
        fallback: BaselineSetpoints::default(),
    };
    for forecast in [ForecastError::None, ForecastError::AmbientNoise { std: 1.0 }] {
        let run = closed_loop(&params, &controller, &opts, forecast).unwrap();
        assert_eq!(run.log.len(), 7 * 24 * 60);
        assert_eq!(solver_failures(&run), 0, "{forecast:?}");
        let s = run.summary(&ComfortSchedule::heating_default()).unwrap();
        assert_eq!(s.control_steps, 7 * 48);
    }
}

#[test]
fn hysteresis_band_is_held_on_a_mild_week() {
    let params = PlantParams::default();
    let models = armax_bundle(&params, Mode::Heating, 28);
    // overcast and steady, so the upper bound never needs cooling
    let mut opts = common::options(common::month_start(2024, 2), 7, 8, Mode::Heating);
    opts.weather.mean_temperature = 8.0;
    opts.weather.seasonal_amplitude = 0.0;
    opts.weather.diurnal_amplitude = 2.0;
    opts.weather.noise_std = 1.0;
    opts.weather.clear_sky_peak = 200.0;
    let (lo, hi) = BaselineSetpoints::default().config(Mode::Heating).limits();
    let band = ComfortSchedule::constant(lo, hi);
    let config = MpcConfig {
        comfort: band.clone(),
        lambda: 1e4,
        margin: 0.3,
        ..MpcConfig::default()
    };
    let controller = Controller::Mpc {
        models,
        config,
        fallback: BaselineSetpoints::default(),
    };
    let run = closed_loop(&params, &controller, &opts, ForecastError::None).unwrap();
    assert_eq!(solver_failures(&run), 0);
    let s = after_warm_up(&run).summary(&band).unwrap();
    assert!(s.violation_kh < 1e-6, "violation {} K·h, max {} K", s.violation_kh, s.max_violation);
}
