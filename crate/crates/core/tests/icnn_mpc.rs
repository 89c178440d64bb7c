mod common;

use bldmpc_core::features::{ActuatorOption, FeatureFrame};
use bldmpc_core::icnn::{Architecture, IcnnKind, IcnnZoneModel, TrainConfig};
use bldmpc_core::mpc::{horizon_objective, slacks, solve_icnn_mpc, IcnnMpcSettings};
use bldmpc_core::plant::{Mode, PlantParams};
use bldmpc_core::Error;

struct Instance {
    model: IcnnZoneModel,
    frame: FeatureFrame,
}

fn instance(kind: IcnnKind, seed: u64) -> Instance {
    let params = PlantParams::default();
    let log = common::prbs_log(&params, common::month_start(2023, 7), 4, seed, Mode::Cooling);
    let cfg = common::zone_config(0, params.n_zones(), 1, ActuatorOption::ValveOnly);
    let train = TrainConfig {
        epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let arch = Architecture {
        hidden: vec![8, 8],
        offset: 0.0,
    };
    let model = IcnnZoneModel::fit(&[log.clone()], &cfg, kind, arch, &train).unwrap();
    let frame = FeatureFrame::new(&log, &cfg).unwrap();
    Instance { model, frame }
}

fn objective(inst: &Instance, now: usize, gains: &[f64], bounds: &[(f64, f64)], s: &IcnnMpcSettings, b: &[f64]) -> f64 {
    let u: Vec<f64> = b.iter().zip(gains).map(|(b, g)| b * g).collect();
    let y = inst.model.predict_recursive(&inst.frame, now, b.len(), Some(&u)).unwrap();
    horizon_objective(b, &slacks(&y, bounds), s.r, s.lambda)
}

fn grid_oracle(inst: &Instance, now: usize, gains: &[f64], bounds: &[(f64, f64)], s: &IcnnMpcSettings) -> f64 {
    common::oracles::cube_search(|b| objective(inst, now, gains, bounds, s, b)).1
}

#[test]
fn matches_grid_search_on_three_step_instances() {
    let mut cases = 0;
    for (kind, seed) in [(IcnnKind::Picnn, 1), (IcnnKind::Ficnn, 2), (IcnnKind::Picnn, 3)] {
        let inst = instance(kind, seed);
        let s = IcnnMpcSettings {
            lambda: 10.0,
            ..IcnnMpcSettings::default()
        };
        for now in [20, 77, 130] {
            let gains: Vec<f64> = (0..3).map(|m| inst.frame.actuator_gain(now + m, now, 1.0)).collect();
            let free = inst.model.predict_recursive(&inst.frame, now, 3, Some(&[0.0; 3])).unwrap();
            for offset in [0.05, 0.2, 0.5] {
                let bounds: Vec<(f64, f64)> = free.iter().map(|y| (f64::NEG_INFINITY, y - offset)).collect();
                let sol = solve_icnn_mpc(&inst.model, &inst.frame, now, &gains, &bounds, &s).unwrap();
                let oracle = grid_oracle(&inst, now, &gains, &bounds, &s);
                let recomputed = objective(&inst, now, &gains, &bounds, &s, &sol.u);
                assert!((recomputed - sol.objective).abs() < 1e-9);
                assert!(
                    (sol.objective - oracle).abs() <= 1e-3,
                    "{kind:?} now {now} offset {offset}: solver {} oracle {oracle}",
                    sol.objective
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 27);
}

#[test]
fn zero_network_plans_no_input() {
    let mut inst = instance(IcnnKind::Picnn, 4);
    inst.model.net.params.iter_mut().for_each(|p| *p = 0.0);
    inst.model.net.norm.y_mean = 0.0;
    let now = 40;
    let y_now = inst.frame.y[now];
    let gains = vec![-1.0; 6];
    let bounds = vec![(f64::NEG_INFINITY, y_now - 1.0); 6];
    let sol = solve_icnn_mpc(&inst.model, &inst.frame, now, &gains, &bounds, &IcnnMpcSettings::default()).unwrap();
    assert!(sol.u.iter().all(|&u| u == 0.0), "{:?}", sol.u);
    for y in &sol.y {
        assert!((y - y_now).abs() < 1e-9);
    }
}

#[test]
fn never_worse_than_zero_input() {
    let inst = instance(IcnnKind::Ficnn, 5);
    let s = IcnnMpcSettings::default();
    for now in (10..150).step_by(13) {
        let n = 8;
        let gains: Vec<f64> = (0..n).map(|m| inst.frame.actuator_gain(now + m, now, 1.0)).collect();
        let y_max = inst.frame.y[now] - 0.3;
        let bounds = vec![(f64::NEG_INFINITY, y_max); n];
        let sol = solve_icnn_mpc(&inst.model, &inst.frame, now, &gains, &bounds, &s).unwrap();
        let zero = objective(&inst, now, &gains, &bounds, &s, &vec![0.0; n]);
        assert!(sol.objective <= zero, "now {now}: {} > {zero}", sol.objective);
        assert!(sol.u.iter().all(|u| (0.0..=1.0).contains(u)));
        assert!(sol.eps.iter().all(|&e| e >= 0.0));
    }
}

#[test]
fn lower_bounds_need_the_explicit_flag() {
    let inst = instance(IcnnKind::Picnn, 6);
    let gains = vec![-1.0; 3];
    let bounds = vec![(21.0, 25.0); 3];
    let err = solve_icnn_mpc(&inst.model, &inst.frame, 30, &gains, &bounds, &IcnnMpcSettings::default()).unwrap_err();
    assert!(matches!(err, Error::LowerBoundRequested));
    let s = IcnnMpcSettings {
        allow_nonconvex_lower_bound: true,
        ..IcnnMpcSettings::default()
    };
    let sol = solve_icnn_mpc(&inst.model, &inst.frame, 30, &gains, &bounds, &s).unwrap();
    assert_eq!(sol.u.len(), 3);
}
