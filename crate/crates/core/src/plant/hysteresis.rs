use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HysteresisConfig {
    pub setpoint: f64,
    #[serde(default = "default_band")]
    pub band: f64,
    pub mode: Mode,
}

fn default_band() -> f64 {
    1.0
}

impl HysteresisConfig {
    pub fn new(setpoint: f64, band: f64, mode: Mode) -> Result<Self> {
        let cfg = Self { setpoint, band, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.band > 0.0) {
            return Err(Error::invalid(format!("hysteresis band must be positive, got {}", self.band)));
        }
        Ok(())
    }

    /// Comfort interval the controller keeps the zone in.
    pub fn limits(&self) -> (f64, f64) {
        match self.mode {
            Mode::Heating => (self.setpoint - self.band, self.setpoint),
            Mode::Cooling => (self.setpoint, self.setpoint + self.band),
        }
    }
}

/// Two-threshold switching law. Inside the band the previous state holds.
pub fn hysteresis_control(t_zone: f64, cfg: &HysteresisConfig, previously_open: bool) -> bool {
    let (lo, hi) = cfg.limits();
    match cfg.mode {
        Mode::Heating if t_zone < lo => true,
        Mode::Heating if t_zone > hi => false,
        Mode::Cooling if t_zone > hi => true,
        Mode::Cooling if t_zone < lo => false,
        _ => previously_open,
    }
}

/// Stateful single-zone hysteresis controller.
#[derive(Clone, Debug)]
pub struct Hysteresis {
    pub config: HysteresisConfig,
    open: bool,
}

impl Hysteresis {
    pub fn new(config: HysteresisConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, open: false })
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn update(&mut self, t_zone: f64) -> f64 {
        self.open = hysteresis_control(t_zone, &self.config, self.open);
        if self.open {
            1.0
        } else {
            0.0
        }
    }
}
