use chrono::{NaiveDate, TimeZone, Utc};
use rayon::prelude::*;
use serde::Serialize;

use bldmpc_core::eval::{
    bench_solvers, compare_energy, daily_aggregates, mse_openloop, normal_operation_days, BenchScenario,
    DailyAggregate, EnergyComparison, StudyOptions, Variant,
};
use bldmpc_core::features::{ActuatorOption, ChannelRoles, RegressorConfig, Site};
use bldmpc_core::forest::ForestHyper;
use bldmpc_core::icnn::{Architecture, IcnnKind, TrainConfig};
use bldmpc_core::models::{train_zone, ModelBundle, ModelKind};
use bldmpc_core::mpc::{
    closed_loop, ClosedLoopRun, ClosedLoopSummary, ComfortSchedule, Controller, ForecastError, MpcConfig,
};
use bldmpc_core::TimeSeries;
use bldmpc_core::plant::{
    generate_dataset, BaselineSetpoints, DatasetController, DatasetOptions, Mode, ModeSchedule, WeatherConfig,
};

use crate::io::{self, CliError, CliResult};
use crate::plot;
use crate::{
    BenchArgs, DatasetControllerArg, EvaluateArgs, ModeArg, ModelArg, MpcRunArgs, SampleEffArgs, SimulateArgs,
    TrainArgs,
};

fn midnight(date: NaiveDate) -> chrono::DateTime<Utc> {
    Utc.from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight exists"))
}

fn fixed_mode(mode: ModeArg) -> Option<Mode> {
    match mode {
        ModeArg::Auto => None,
        ModeArg::Heating => Some(Mode::Heating),
        ModeArg::Cooling => Some(Mode::Cooling),
    }
}

fn dataset_options(
    start: NaiveDate,
    days: usize,
    seed: u64,
    mode: ModeSchedule,
    noise_std: f64,
    initial: Option<f64>,
    weather: Option<&std::path::Path>,
) -> CliResult<DatasetOptions> {
    if days == 0 {
        return Err(CliError::Config("--days must be at least 1".into()));
    }
    let mut o = DatasetOptions::new(midnight(start), days, seed);
    o.mode = mode;
    o.noise_std = noise_std;
    if let Some(path) = weather {
        o.weather = io::load_json::<WeatherConfig>(path)?;
    }
    let cooling = matches!(mode, ModeSchedule::Fixed { mode: Mode::Cooling });
    o.initial_temperature = initial.unwrap_or(if cooling { 24.5 } else { 21.5 });
    Ok(o)
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> CliResult {
    let params = io::load_plant(a.plant.as_deref())?;
    let mode = fixed_mode(a.mode).map_or(ModeSchedule::default(), |mode| ModeSchedule::Fixed { mode });
    let opts = dataset_options(a.start, a.days, seed, mode, a.noise_std, a.initial_temperature, a.weather.as_deref())?;
    let controller = match a.controller {
        DatasetControllerArg::Hysteresis => DatasetController::Hysteresis(BaselineSetpoints::default()),
        DatasetControllerArg::Prbs => DatasetController::Prbs { hold_secs: a.prbs_hold },
    };
    let log = generate_dataset(&params, controller, &opts)?;
    log.save_csv(&a.out)?;
    eprintln!("wrote {} samples to {}", log.len(), a.out.display());
    Ok(())
}

fn model_kind(model: ModelArg, trees: Option<usize>, epochs: Option<usize>, hidden: Option<&[usize]>) -> ModelKind {
    let icnn = |kind| {
        let mut arch = Architecture::default();
        if let Some(h) = hidden {
            arch.hidden = h.to_vec();
        }
        let mut train = TrainConfig::default();
        if let Some(e) = epochs {
            train.epochs = e;
        }
        ModelKind::Icnn { kind, arch, train }
    };
    match model {
        ModelArg::Armax => ModelKind::Armax { nonneg: true },
        ModelArg::ArmaxUnconstrained => ModelKind::Armax { nonneg: false },
        ModelArg::Rf => {
            let mut hyper = ForestHyper::default();
            if let Some(t) = trees {
                hyper.n_trees = t;
            }
            ModelKind::Rf { hyper }
        }
        ModelArg::Ficnn => icnn(IcnnKind::Ficnn),
        ModelArg::Picnn => icnn(IcnnKind::Picnn),
    }
}

fn zone_config(zone: usize, n_zones: usize, delta: usize, tau: usize, actuator: ActuatorOption, site: Site) -> RegressorConfig {
    RegressorConfig {
        delta,
        tau,
        actuator,
        roles: ChannelRoles::plant_zone(zone, n_zones),
        site,
    }
}

pub fn train(a: &TrainArgs, seed: u64) -> CliResult {
    let site = match &a.plant {
        Some(p) => io::load_plant(Some(p))?.site,
        None => Site::default(),
    };
    let data = io::resample_to(io::load_series(&a.data)?, a.step, &a.data)?;
    let nz = io::zone_count(&data)?;
    let kind = model_kind(a.model, a.trees, a.epochs, a.hidden.as_deref()).with_seed(seed);
    let zones = (0..nz)
        .into_par_iter()
        .map(|z| {
            let cfg = zone_config(z, nz, a.delta, a.tau, a.actuator, site);
            train_zone(&kind, std::slice::from_ref(&data), &cfg, a.horizon)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ModelBundle { zones }.save(&a.out)?;
    eprintln!("wrote {} {} zone models to {}", nz, kind.label(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    controller: &'a str,
    mode: Mode,
    seed: u64,
    start: String,
    #[serde(flatten)]
    summary: ClosedLoopSummary,
}

pub fn mpc_run(a: &MpcRunArgs, seed: u64) -> CliResult {
    let params = io::load_plant(a.plant.as_deref())?;
    let mut config = match &a.config {
        Some(p) => io::load_mpc_config(p)?,
        None => MpcConfig::default(),
    };
    config.allow_nonconvex_lower_bound |= a.allow_nonconvex_lower_bound;
    let opts = dataset_options(
        a.start,
        a.days,
        seed,
        ModeSchedule::Fixed { mode: config.mode },
        a.noise_std,
        a.initial_temperature,
        a.weather.as_deref(),
    )?;
    let forecast = if a.forecast_noise > 0.0 {
        ForecastError::AmbientNoise { std: a.forecast_noise }
    } else {
        ForecastError::None
    };
    let (controller, name) = if a.baseline {
        (Controller::Hysteresis(BaselineSetpoints::default()), "hysteresis".to_string())
    } else {
        let path = a.model.as_deref().expect("clap requires --model without --baseline");
        let models = io::load_models(path)?;
        let name = format!("mpc_{}", models.kind_name());
        let controller = Controller::Mpc {
            models,
            config: config.clone(),
            fallback: BaselineSetpoints::default(),
        };
        (controller, name)
    };
    let run = closed_loop(&params, &controller, &opts, forecast)?;
    run.log.save_csv(&a.out)?;
    let summary = run.summary(&config.comfort)?;
    io::write_json(
        &io::sibling(&a.out, "summary.json"),
        &RunSummary {
            controller: &name,
            mode: config.mode,
            seed,
            start: opts.start.to_rfc3339(),
            summary,
        },
    )?;
    io::write_json(&io::sibling(&a.out, "timing.json"), &run.timing())?;
    eprintln!("wrote {} samples to {}", run.log.len(), a.out.display());
    Ok(())
}

pub fn sample_efficiency(a: &SampleEffArgs, seed: u64) -> CliResult {
    let data = io::resample_to(io::load_series(&a.data)?, a.step, &a.data)?;
    let nz = io::zone_count(&data)?;
    if a.zone == 0 || a.zone > nz {
        return Err(CliError::Config(format!("--zone must be between 1 and {nz}")));
    }
    let mut variants = Vec::new();
    for &m in &a.models {
        for &act in &a.actuators {
            let kind = model_kind(m, a.trees, a.epochs, None);
            let label = if a.actuators.len() > 1 {
                format!("{}/{}", kind.label(), act.name())
            } else {
                kind.label()
            };
            variants.push(Variant {
                label,
                kind,
                config: zone_config(a.zone - 1, nz, a.delta, 9, act, Site::default()),
            });
        }
    }
    let opts = StudyOptions {
        sizes: a.sizes.clone(),
        reps: a.reps,
        seed,
        horizon_secs: a.horizon_secs,
        validation_weeks: a.validation_weeks,
    };
    let report = bldmpc_core::eval::sample_efficiency(&data, &variants, &opts)?;
    io::write_text(&a.out, &report.to_csv())?;
    if let Some(p) = &a.json {
        io::write_json(p, &report)?;
    }
    if let Some(p) = &a.plot {
        plot::mse_curves(&report, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ComfortReport {
    violation_kh: f64,
    max_violation: f64,
    violation_fraction: f64,
    mean_temperature: f64,
}

impl From<ClosedLoopSummary> for ComfortReport {
    fn from(s: ClosedLoopSummary) -> Self {
        Self {
            violation_kh: s.violation_kh,
            max_violation: s.max_violation,
            violation_fraction: s.violation_fraction,
            mean_temperature: s.mean_temperature,
        }
    }
}

#[derive(Serialize)]
struct EnergyReport {
    mode: Mode,
    t_ref: f64,
    mpc_days: usize,
    baseline_days: usize,
    comparison: EnergyComparison,
    mpc_comfort: ComfortReport,
    baseline_comfort: ComfortReport,
}

#[derive(Serialize, Default)]
struct EvaluateReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<EnergyReport>,
    /// Open-loop MSE per zone, K².
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<Vec<f64>>,
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult {
    let mut report = EvaluateReport::default();
    let mode = fixed_mode(a.mode).ok_or_else(|| CliError::Config("--mode must be heating or cooling".into()))?;
    if let (Some(mpc_path), Some(base_path)) = (&a.mpc, &a.baseline) {
        let comfort = match &a.config {
            Some(p) => io::load_mpc_config(p)?.comfort,
            None if mode == Mode::Heating => ComfortSchedule::heating_default(),
            None => ComfortSchedule::cooling_default(),
        };
        let mpc = io::load_series(mpc_path)?;
        let base = io::load_series(base_path)?;
        let days = |log| -> CliResult<Vec<DailyAggregate>> { Ok(normal_operation_days(&daily_aggregates(log, mode)?)) };
        let (mpc_days, base_days) = (days(&mpc)?, days(&base)?);
        let comparison = compare_energy(&mpc_days, &base_days, mode, a.t_ref)?;
        if let Some(p) = &a.curve {
            let mut s = String::from("degree_solar_days,saving\n");
            for (x, y) in &comparison.curve {
                s.push_str(&format!("{x:.6},{y:.6}\n"));
            }
            io::write_text(p, &s)?;
        }
        if let Some(p) = &a.plot {
            plot::degree_days(&comparison, &mpc_days, &base_days, mode, p)?;
        }
        let comfort_of = |log: TimeSeries| -> CliResult<ComfortReport> {
            Ok(ClosedLoopRun { log, steps: Vec::new() }.summary(&comfort)?.into())
        };
        report.energy = Some(EnergyReport {
            mode,
            t_ref: a.t_ref,
            mpc_days: mpc_days.len(),
            baseline_days: base_days.len(),
            comparison,
            mpc_comfort: comfort_of(mpc)?,
            baseline_comfort: comfort_of(base)?,
        });
    }
    if let (Some(model_path), Some(data_path)) = (&a.model, &a.data) {
        let models = io::load_models(model_path)?;
        let step = models.zones.first().map_or(1800, |z| z.step_secs());
        let data = io::resample_to(io::load_series(data_path)?, step, data_path)?;
        let mse = models
            .zones
            .iter()
            .map(|m| mse_openloop(m, std::slice::from_ref(&data), a.horizon_secs))
            .collect::<Result<Vec<_>, _>>()?;
        report.mse = Some(mse);
    }
    if report.energy.is_none() && report.mse.is_none() {
        return Err(CliError::Config("evaluate needs --mpc with --baseline, or --model with --data".into()));
    }
    io::write_json(&a.out, &report)
}

pub fn bench(a: &BenchArgs) -> CliResult {
    let config = match &a.config {
        Some(p) => io::load_mpc_config(p)?,
        None => MpcConfig::default(),
    };
    let bundles = a.models.iter().map(|p| io::load_models(p)).collect::<CliResult<Vec<_>>>()?;
    let data = io::resample_to(io::load_series(&a.data)?, config.control_step, &a.data)?;
    let zone = a.zone.checked_sub(1).ok_or_else(|| CliError::Config("--zone counts from 1".into()))?;
    let mut named = Vec::new();
    for (path, bundle) in a.models.iter().zip(&bundles) {
        let model = bundle
            .zones
            .get(zone)
            .ok_or_else(|| io::config_error(path, format!("bundle has no zone {}", a.zone)))?;
        let name = path.file_stem().map_or_else(|| model.kind_name().to_string(), |s| s.to_string_lossy().into_owned());
        named.push((name, model));
    }
    let now = a.now.unwrap_or(data.len() / 2);
    if now + config.horizon >= data.len() {
        return Err(CliError::Config(format!("--now {now} leaves no room for the horizon in {}", a.data.display())));
    }
    let scenario = BenchScenario {
        frame_data: &data,
        now,
        config,
    };
    let refs: Vec<(&str, &bldmpc_core::models::ZoneModel)> = named.iter().map(|(n, m)| (n.as_str(), *m)).collect();
    let rows = bench_solvers(&refs, &scenario, a.reps)?;
    let mut s = String::from("model,mean_secs,std_secs,rss_delta_kb,reps\n");
    for r in &rows {
        s.push_str(&format!("{},{:.6},{:.6},{},{}\n", r.model, r.mean_secs, r.std_secs, r.rss_delta_kb, r.reps));
    }
    io::write_text(&a.out, &s)?;
    print!("{s}");
    Ok(())
}
