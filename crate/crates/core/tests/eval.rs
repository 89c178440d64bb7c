mod common;

use bldmpc_core::armax::{ArmaxModel, TrainingStats};
use bldmpc_core::data::{TimeSeries, Unit};
use bldmpc_core::eval::{
    comfort_violation, compare_energy, degree_day_regression, mse_openloop, sample_efficiency, DailyAggregate,
    StudyOptions, Variant,
};
use bldmpc_core::features::{ActuatorOption, ChannelRoles, RegressorConfig, Site};
use bldmpc_core::models::{ModelKind, ZoneModel};
use bldmpc_core::plant::{generate_dataset, BaselineSetpoints, DatasetController, Mode, PlantParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn roles() -> ChannelRoles {
    ChannelRoles {
        output: "T_1".into(),
        neighbors: vec!["T_n".into()],
        ambient: "T_amb".into(),
        irradiance: "I_hor".into(),
        valve: "b_1".into(),
        supply_temperature: None,
        energy: None,
        mode: None,
    }
}

fn config(delta: usize) -> RegressorConfig {
    RegressorConfig {
        delta,
        tau: 9,
        actuator: ActuatorOption::ValveOnly,
        roles: roles(),
        site: Site::default(),
    }
}

fn armax(cfg: RegressorConfig, set: impl Fn(&mut Vec<f64>)) -> ZoneModel {
    let mut theta = vec![0.0; cfg.layout().width()];
    set(&mut theta);
    ZoneModel::Armax(ArmaxModel {
        theta,
        config: cfg,
        nonneg: false,
        training_stats: TrainingStats {
            rows: 0,
            residual_norm: 0.0,
        },
        step_secs: 1800,
        energy_gain: None,
    })
}

fn series(y: Vec<f64>, valve: Vec<f64>, ambient: Vec<f64>, neighbor: Vec<f64>) -> TimeSeries {
    let n = y.len();
    TimeSeries::builder(common::t0(), 1800)
        .channel("T_1", Unit::Celsius, y)
        .channel("T_n", Unit::Celsius, neighbor)
        .channel("T_amb", Unit::Celsius, ambient)
        .channel("I_hor", Unit::WattPerSquareMeter, vec![0.0; n])
        .channel("b_1", Unit::Fraction, valve)
        .build()
        .unwrap()
}

#[test]
fn exact_model_on_noiseless_data_has_no_error() {
    let cfg = config(1);
    let l = cfg.layout();
    let (a0, a1, b0, b1, c0, c1, n0) = (0.7, 0.15, 0.8, 0.2, 0.06, 0.04, 0.05);
    let model = armax(cfg, |t| {
        t[l.output(0)] = a0;
        t[l.output(1)] = a1;
        t[l.actuator(0)] = b0;
        t[l.actuator(1)] = b1;
        t[l.ambient(0)] = c0;
        t[l.ambient(1)] = c1;
        t[l.neighbor(0, 0)] = n0;
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 400;
    let valve: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ambient: Vec<f64> = (0..n).map(|k| 3.0 * (k as f64 / 20.0).sin()).collect();
    let neighbor: Vec<f64> = (0..n).map(|_| rng.gen_range(19.0..23.0)).collect();
    let mut y = vec![20.0; n];
    for k in 1..n - 1 {
        y[k + 1] = a0 * y[k] + a1 * y[k - 1] + b0 * valve[k] + b1 * valve[k - 1] + c0 * ambient[k] + c1 * ambient[k - 1]
            + n0 * neighbor[k];
    }
    let ts = series(y, valve, ambient, neighbor);
    assert!(mse_openloop(&model, &[ts], 3600).unwrap() <= 1e-10);
}

fn random_walk() -> ZoneModel {
    let cfg = config(0);
    let l = cfg.layout();
    armax(cfg, |t| t[l.output(0)] = 1.0)
}

#[test]
fn holding_the_last_value_on_constant_data() {
    let n = 100;
    let ts = series(vec![21.3; n], vec![0.4; n], vec![5.0; n], vec![21.0; n]);
    assert_eq!(mse_openloop(&random_walk(), &[ts], 3600).unwrap(), 0.0);
}

#[test]
fn random_walk_on_a_daily_sinusoid() {
    use std::f64::consts::TAU;
    // 30 whole days of origins plus the two samples of the horizon
    let n = 30 * 48 + 2;
    let y: Vec<f64> = (0..n).map(|k| (TAU * k as f64 / 48.0).sin()).collect();
    let origins = 0..n - 2;
    let numeric = origins.clone().map(|k| (y[k + 2] - y[k]).powi(2)).sum::<f64>() / origins.len() as f64;
    // E[(sin(t + h) − sin t)²] over a period is 1 − cos h, with h one hour
    let analytic = 1.0 - (TAU / 24.0).cos();
    assert!((numeric - analytic).abs() < 1e-12);
    let ts = series(y, vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mse = mse_openloop(&random_walk(), &[ts], 3600).unwrap();
    assert!((mse - analytic).abs() < 1e-12, "{mse} vs {analytic}");
}

#[test]
fn too_short_validation_data() {
    let ts = series(vec![20.0; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]);
    assert!(mse_openloop(&random_walk(), &[ts], 3600).is_err());
}

fn day(t_amb: f64, i_hor: f64, energy_wh: f64) -> DailyAggregate {
    DailyAggregate {
        day: String::new(),
        energy_wh,
        t_amb,
        i_hor,
        t_room: 22.0,
    }
}

#[test]
fn planted_degree_day_coefficients_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let t_ref = 18.0;
    let days: Vec<DailyAggregate> = (0..40)
        .map(|_| {
            let t = rng.gen_range(-8.0..14.0);
            let i = rng.gen_range(10.0..180.0);
            day(t, i, 500.0 * (t_ref - t) - 2.0 * i + 100.0)
        })
        .collect();
    let r = degree_day_regression(&days, Mode::Heating, t_ref).unwrap();
    assert!((r.theta_dd - 500.0).abs() <= 1e-8, "{}", r.theta_dd);
    assert!((r.theta_sol + 2.0).abs() <= 1e-8, "{}", r.theta_sol);
    assert!((r.c - 100.0).abs() <= 1e-8, "{}", r.c);
    assert!((r.r_squared - 1.0).abs() < 1e-12);
}

#[test]
fn base_temperature_only_moves_the_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for mode in [Mode::Heating, Mode::Cooling] {
        let days: Vec<DailyAggregate> = (0..60)
            .map(|_| {
                let t = rng.gen_range(-5.0..30.0);
                let i = rng.gen_range(0.0..300.0);
                day(t, i, (3000.0 + 350.0 * mode.sign() * (15.0 - t) + 1.5 * i + rng.gen_range(-400.0..400.0)).max(0.0))
            })
            .collect();
        let a = degree_day_regression(&days, mode, 18.0).unwrap();
        for shift in [-6.0, 2.5, 12.0] {
            let b = degree_day_regression(&days, mode, 18.0 + shift).unwrap();
            assert!((a.theta_dd - b.theta_dd).abs() <= 1e-9, "{mode:?} shift {shift}");
            assert!((a.theta_sol - b.theta_sol).abs() <= 1e-9, "{mode:?} shift {shift}");
            assert!((a.c - a.theta_dd * mode.sign() * shift - b.c).abs() <= 1e-6);
            assert!((a.r_squared - b.r_squared).abs() <= 1e-12);
        }
    }
}

fn winter_days(seed: u64, scale: f64) -> Vec<DailyAggregate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..30)
        .map(|_| {
            let t = rng.gen_range(-6.0..12.0);
            let i = rng.gen_range(20.0..150.0);
            day(t, i, scale * (400.0 * (18.0 - t) - 3.0 * i + 800.0 + rng.gen_range(-300.0..300.0)))
        })
        .collect()
}

#[test]
fn energy_comparison_examples() {
    let a = winter_days(1, 1.0);
    let same = compare_energy(&a, &a, Mode::Heating, 18.0).unwrap();
    assert!(same.saving.abs() < 1e-12);

    let doubled: Vec<DailyAggregate> = a.iter().map(|d| day(d.t_amb, d.i_hor, 2.0 * d.energy_wh)).collect();
    let half = compare_energy(&a, &doubled, Mode::Heating, 18.0).unwrap();
    assert!((half.saving - 0.5).abs() < 1e-12, "{}", half.saving);

    let b = winter_days(2, 0.7);
    let ab = compare_energy(&b, &a, Mode::Heating, 18.0).unwrap();
    let ba = compare_energy(&a, &b, Mode::Heating, 18.0).unwrap();
    assert!((ab.ratio * ba.ratio - 1.0).abs() < 1e-12);
    assert!(ab.saving > 0.2 && ba.saving < -0.2);
    assert_eq!(ab.curve.len(), 60);
    assert!(ab.curve.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn violation_matches_dense_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bounds = |_t: f64| (21.0, 24.0);
    for _ in 0..20 {
        let n = 200;
        let times: Vec<f64> = (0..n).map(|k| 60.0 * k as f64).collect();
        let mut y = vec![22.5];
        for _ in 1..n {
            let last = *y.last().unwrap();
            y.push(last + rng.gen_range(-0.25..0.25));
        }
        let v = comfort_violation(&times, &y, bounds).unwrap();

        let mut area = 0.0;
        let mut violated = 0.0;
        let mut max: f64 = 0.0;
        for s in 0..(60 * (n - 1)) {
            let t = s as f64 + 0.5;
            let k = (t / 60.0) as usize;
            let w = (t - times[k]) / 60.0;
            let yt = y[k] * (1.0 - w) + y[k + 1] * w;
            let (lo, hi) = bounds(t);
            let e = (yt - hi).max(lo - yt);
            if e > 0.0 {
                area += e;
                violated += 1.0;
            }
        }
        for (yk, tk) in y.iter().zip(&times) {
            let (lo, hi) = bounds(*tk);
            max = max.max((yk - hi).max(lo - yk));
        }
        assert!((v.integral_kh - area / 3600.0).abs() < 1e-6, "{} vs {}", v.integral_kh, area / 3600.0);
        assert!((v.fraction - violated / times[n - 1]).abs() < 1e-3);
        assert!((v.max - max).abs() < 1e-12);
    }
}

#[test]
fn inside_the_band_is_no_violation() {
    let times: Vec<f64> = (0..50).map(|k| 60.0 * k as f64).collect();
    let y: Vec<f64> = times.iter().map(|t| 22.0 + 0.5 * (t / 600.0).sin()).collect();
    let v = comfort_violation(&times, &y, |_| (21.0, 23.0)).unwrap();
    assert_eq!((v.integral_kh, v.max, v.fraction), (0.0, 0.0, 0.0));
}

fn hysteresis_weeks(weeks: usize) -> TimeSeries {
    let params = PlantParams::default();
    let mut opts = common::options(common::month_start(2023, 1), 7 * weeks, 21, Mode::Heating);
    opts.noise_std = 0.05;
    generate_dataset(&params, DatasetController::Hysteresis(BaselineSetpoints::default()), &opts)
        .unwrap()
        .resample(1800)
        .unwrap()
}

fn armax_variant(nonneg: bool) -> Variant {
    Variant {
        label: ModelKind::Armax { nonneg }.label(),
        kind: ModelKind::Armax { nonneg },
        config: common::zone_config(0, 2, 3, ActuatorOption::MeasuredEnergy),
    }
}

#[test]
fn single_repetition_collapses_the_band() {
    let ts = hysteresis_weeks(5);
    let opts = StudyOptions {
        sizes: vec![1],
        reps: 1,
        seed: 9,
        ..StudyOptions::default()
    };
    let report = sample_efficiency(&ts, &[armax_variant(true)], &opts).unwrap();
    assert_eq!(report.cells.len(), 1);
    let c = &report.cells[0];
    assert_eq!(c.mses.len(), 1);
    assert!(c.p16 == c.median && c.median == c.p84);
}

#[test]
fn studies_are_deterministic_and_ordered() {
    let ts = hysteresis_weeks(8);
    let opts = StudyOptions {
        sizes: vec![1, 2],
        reps: 8,
        seed: 4,
        ..StudyOptions::default()
    };
    let variants = [armax_variant(true), armax_variant(false)];
    let a = sample_efficiency(&ts, &variants, &opts).unwrap();
    let b = sample_efficiency(&ts, &variants, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    for c in &a.cells {
        assert!(c.p16 <= c.median && c.median <= c.p84, "{c:?}");
        assert_eq!(c.mses.len(), 8);
    }
    let other = sample_efficiency(&ts, &variants, &StudyOptions { seed: 5, ..opts }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn study_needs_enough_weeks() {
    let ts = hysteresis_weeks(3);
    let opts = StudyOptions {
        sizes: vec![1],
        reps: 1,
        ..StudyOptions::default()
    };
    assert!(sample_efficiency(&ts, &[armax_variant(true)], &opts).is_err());
}
