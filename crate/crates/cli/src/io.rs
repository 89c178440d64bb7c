use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use bldmpc_core::models::ModelBundle;
use bldmpc_core::mpc::MpcConfig;
use bldmpc_core::plant::PlantParams;
use bldmpc_core::{Error, TimeSeries};

pub enum CliError {
    /// Bad arguments, unreadable inputs or invalid configuration.
    Config(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn config_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| config_error(path, e))
}

/// Parses a JSON file, naming the offending field on failure.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        config_error(path, format!("field `{field}`: {}", e.inner()))
    })
}

pub fn load_plant(path: Option<&Path>) -> CliResult<PlantParams> {
    let Some(path) = path else {
        return Ok(PlantParams::default());
    };
    let params: PlantParams = load_json(path)?;
    params.validate().map_err(|e| config_error(path, e))?;
    Ok(params)
}

pub fn load_mpc_config(path: &Path) -> CliResult<MpcConfig> {
    let cfg: MpcConfig = load_json(path)?;
    cfg.validate().map_err(|e| config_error(path, e))?;
    Ok(cfg)
}

pub fn load_series(path: &Path) -> CliResult<TimeSeries> {
    if !path.is_file() {
        return Err(config_error(path, "no such file"));
    }
    TimeSeries::load_csv_inferred(path).map_err(|e| config_error(path, e))
}

pub fn load_models(path: &Path) -> CliResult<ModelBundle> {
    if !path.is_file() {
        return Err(config_error(path, "no such file"));
    }
    ModelBundle::load(path).map_err(|e| config_error(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

/// `out` with its extension replaced by `suffix`, e.g. `run.csv` →
/// `run.summary.json`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

/// Number of zones in a plant log, from its valve channels.
pub fn zone_count(ts: &TimeSeries) -> CliResult<usize> {
    let n = (1..).take_while(|z| ts.has_channel(&format!("b_{z}"))).count();
    if n == 0 {
        return Err(CliError::Config("log has no valve channel `b_1`".into()));
    }
    Ok(n)
}

pub fn resample_to(ts: TimeSeries, step: i64, path: &Path) -> CliResult<TimeSeries> {
    if ts.step_secs() == step {
        return Ok(ts);
    }
    ts.resample(step).map_err(|e| config_error(path, e))
}
