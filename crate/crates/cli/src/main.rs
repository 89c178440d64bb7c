//! `bldmpc`: simulate the plant, identify zone models, run closed-loop MPC
//! and produce the evaluation reports.
//!
//! Exit codes: 0 on success, 1 when arguments or input files are invalid,
//! 2 when a pipeline fails at run time.

mod commands;
mod io;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use bldmpc_core::ActuatorOption;

#[derive(Parser)]
#[command(name = "bldmpc", version, about = "Data-driven building MPC pipelines")]
struct Cli {
    /// Master seed; every random draw of a pipeline derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel stages (repetitions, zones, trees).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant under the hysteresis baseline or a PRBS excitation.
    Simulate(SimulateArgs),
    /// Fit one model per zone on a simulator or measurement log.
    Train(TrainArgs),
    /// Run a closed-loop episode against the plant.
    MpcRun(MpcRunArgs),
    /// Open-loop MSE against training-set size over repeated fold draws.
    SampleEfficiency(SampleEffArgs),
    /// Degree-day energy comparison, comfort metrics and open-loop MSE.
    Evaluate(EvaluateArgs),
    /// Time single MPC solves of trained models on a fixed scenario.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Heating when the previous day's mean ambient is below 15 °C.
    Auto,
    Heating,
    Cooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetControllerArg {
    Hysteresis,
    Prbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Armax,
    ArmaxUnconstrained,
    Rf,
    Ficnn,
    Picnn,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Plant parameter JSON; the built-in two-zone plant when omitted.
    #[arg(long)]
    pub plant: Option<PathBuf>,
    #[arg(long)]
    pub days: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "2023-01-01")]
    pub start: NaiveDate,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = DatasetControllerArg::Hysteresis)]
    pub controller: DatasetControllerArg,
    /// Hold time of the PRBS excitation, s.
    #[arg(long, default_value_t = 7200)]
    pub prbs_hold: i64,
    /// Standard deviation of the temperature sensor noise, K.
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// Initial zone and wall temperature; 21.5 °C, or 24.5 °C in cooling.
    #[arg(long)]
    pub initial_temperature: Option<f64>,
    /// Weather generator JSON.
    #[arg(long)]
    pub weather: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of lags beyond the current sample.
    #[arg(long, default_value_t = 3)]
    pub delta: usize,
    /// Time-of-day bins of the solar encoding.
    #[arg(long, default_value_t = 9)]
    pub tau: usize,
    #[arg(long, default_value = "measured_energy")]
    pub actuator: ActuatorOption,
    /// Model sample period, s; the log is resampled to it.
    #[arg(long, default_value_t = 1800)]
    pub step: i64,
    /// Steps a forest must cover (the MPC horizon).
    #[arg(long, default_value_t = 14)]
    pub horizon: usize,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// ICNN hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Plant parameter JSON, read for the site coordinates.
    #[arg(long)]
    pub plant: Option<PathBuf>,
}

#[derive(Args)]
pub struct MpcRunArgs {
    /// Model bundle from `train`; required unless `--baseline`.
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub plant: Option<PathBuf>,
    /// MPC configuration JSON; its mode selects heating or cooling.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub days: usize,
    /// Log CSV; the summary and timing JSON files are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "2024-01-01")]
    pub start: NaiveDate,
    /// Run the hysteresis baseline instead of MPC.
    #[arg(long)]
    pub baseline: bool,
    /// Standard deviation of the ambient forecast error, K.
    #[arg(long, default_value_t = 0.0)]
    pub forecast_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long)]
    pub initial_temperature: Option<f64>,
    #[arg(long)]
    pub weather: Option<PathBuf>,
    /// Keep lower comfort bounds in ICNN problems without a convexity guarantee.
    #[arg(long)]
    pub allow_nonconvex_lower_bound: bool,
}

#[derive(Args)]
pub struct SampleEffArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "armax,rf,picnn")]
    pub models: Vec<ModelArg>,
    /// Actuator inputs; several give one variant per model and input.
    #[arg(long, value_delimiter = ',', default_value = "measured_energy")]
    pub actuators: Vec<ActuatorOption>,
    /// Training sizes in weeks.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 25)]
    pub reps: usize,
    /// Zone whose temperature is predicted, counted from 1.
    #[arg(long, default_value_t = 1)]
    pub zone: usize,
    #[arg(long, default_value_t = 3)]
    pub delta: usize,
    #[arg(long, default_value_t = 1800)]
    pub step: i64,
    #[arg(long, default_value_t = 3600)]
    pub horizon_secs: i64,
    #[arg(long, default_value_t = 4)]
    pub validation_weeks: usize,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Percentile table.
    #[arg(long)]
    pub out: PathBuf,
    /// Full report with every repetition's MSE.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// MSE-against-weeks plot with percentile bands.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Closed-loop log under MPC.
    #[arg(long, requires = "baseline")]
    pub mpc: Option<PathBuf>,
    /// Closed-loop log under the baseline controller.
    #[arg(long, requires = "mpc")]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Heating)]
    pub mode: ModeArg,
    /// Degree-day reference temperature; the constant absorbs it.
    #[arg(long, default_value_t = 18.0)]
    pub t_ref: f64,
    /// MPC configuration JSON whose comfort schedule judges violations.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model bundle whose open-loop MSE is measured on `--data`.
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 3600)]
    pub horizon_secs: i64,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-day savings curve.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Energy against degree-solar days with both regression lines.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Model bundles to compare.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<PathBuf>,
    /// Log providing the fixed initial conditions and forecasts.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub zone: usize,
    /// Origin sample of the scenario; the middle of the log when omitted.
    #[arg(long)]
    pub now: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("the global pool is configured once");
    }
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a, cli.seed),
        Command::Train(a) => commands::train(a, cli.seed),
        Command::MpcRun(a) => commands::mpc_run(a, cli.seed),
        Command::SampleEfficiency(a) => commands::sample_efficiency(a, cli.seed),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
