//! One interface over the three model families, per zone and per plant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::armax::ArmaxModel;
use crate::data::TimeSeries;
use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};
use crate::features::{FeatureFrame, RegressorConfig};
use crate::forest::{ForestHyper, RfModel};
use crate::icnn::{Architecture, IcnnKind, IcnnZoneModel, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum ZoneModel {
    Armax(ArmaxModel),
    Rf(RfModel),
    Icnn(IcnnZoneModel),
}

impl ZoneModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ZoneModel::Armax(_) => "armax",
            ZoneModel::Rf(_) => "rf",
            ZoneModel::Icnn(m) => match m.net.kind {
                IcnnKind::Ficnn => "ficnn",
                IcnnKind::Picnn => "picnn",
            },
        }
    }

    pub fn config(&self) -> &RegressorConfig {
        match self {
            ZoneModel::Armax(m) => &m.config,
            ZoneModel::Rf(m) => &m.config,
            ZoneModel::Icnn(m) => &m.config,
        }
    }

    pub fn step_secs(&self) -> i64 {
        match self {
            ZoneModel::Armax(m) => m.step_secs,
            ZoneModel::Rf(m) => m.step_secs,
            ZoneModel::Icnn(m) => m.step_secs,
        }
    }

    pub fn energy_gain(&self) -> Option<f64> {
        match self {
            ZoneModel::Armax(m) => m.energy_gain,
            ZoneModel::Rf(m) => m.energy_gain,
            ZoneModel::Icnn(m) => m.energy_gain,
        }
    }

    /// Smallest admissible prediction origin in a frame.
    pub fn min_history(&self) -> usize {
        match self {
            ZoneModel::Armax(m) => m.config.delta,
            ZoneModel::Rf(m) => m.config.delta,
            ZoneModel::Icnn(_) => 1,
        }
    }

    /// Longest horizon the model can predict, if bounded.
    pub fn max_steps(&self) -> Option<usize> {
        match self {
            ZoneModel::Rf(m) => Some(m.horizon()),
            _ => None,
        }
    }

    pub fn predict_frame(&self, frame: &FeatureFrame, now: usize, steps: usize, u: Option<&[f64]>) -> Result<Vec<f64>> {
        match self {
            ZoneModel::Armax(m) => m.predict_frame(frame, now, steps, u),
            ZoneModel::Rf(m) => m.predict_frame(frame, now, steps, u),
            ZoneModel::Icnn(m) => m.predict_recursive(frame, now, steps, u),
        }
    }

    /// Horizon dynamics affine in the duties; `None` for ICNN models.
    pub fn affine_dynamics(
        &self,
        frame: &FeatureFrame,
        now: usize,
        steps: usize,
        gains: &[f64],
    ) -> Result<Option<AffineDynamics>> {
        match self {
            ZoneModel::Armax(m) => m.affine_dynamics(frame, now, steps, gains).map(Some),
            ZoneModel::Rf(m) => m.affine_dynamics(frame, now, steps, gains).map(Some),
            ZoneModel::Icnn(_) => Ok(None),
        }
    }
}

/// Model family and hyperparameters to train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelKind {
    Armax {
        nonneg: bool,
    },
    Rf {
        #[serde(default)]
        hyper: ForestHyper,
    },
    Icnn {
        kind: IcnnKind,
        #[serde(default)]
        arch: Architecture,
        #[serde(default)]
        train: TrainConfig,
    },
}

impl ModelKind {
    pub fn label(&self) -> String {
        match self {
            ModelKind::Armax { nonneg: true } => "armax".into(),
            ModelKind::Armax { nonneg: false } => "armax_unconstrained".into(),
            ModelKind::Rf { .. } => "rf".into(),
            ModelKind::Icnn { kind: IcnnKind::Ficnn, .. } => "ficnn".into(),
            ModelKind::Icnn { kind: IcnnKind::Picnn, .. } => "picnn".into(),
        }
    }

    /// Same family with the seed replaced, for repeated studies.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            ModelKind::Armax { .. } => self.clone(),
            ModelKind::Rf { hyper } => ModelKind::Rf {
                hyper: ForestHyper { seed, ..*hyper },
            },
            ModelKind::Icnn { kind, arch, train } => ModelKind::Icnn {
                kind: *kind,
                arch: arch.clone(),
                train: TrainConfig { seed, ..train.clone() },
            },
        }
    }
}

/// Trains one zone model on contiguous segments sampled at the model step.
/// `horizon` is the number of steps a forest must cover.
pub fn train_zone(kind: &ModelKind, segments: &[TimeSeries], config: &RegressorConfig, horizon: usize) -> Result<ZoneModel> {
    match kind {
        ModelKind::Armax { nonneg } => ArmaxModel::fit_segments(segments, config, *nonneg).map(ZoneModel::Armax),
        ModelKind::Rf { hyper } => RfModel::fit_horizon(segments, config, horizon, *hyper).map(ZoneModel::Rf),
        ModelKind::Icnn { kind, arch, train } => {
            IcnnZoneModel::fit(segments, config, *kind, arch.clone(), train).map(ZoneModel::Icnn)
        }
    }
}

/// One model per plant zone, in zone order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub zones: Vec<ZoneModel>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum BundleFile {
    Armax { zones: Vec<ArmaxModel> },
    /// Forest manifests are stored next to the bundle, one per zone.
    Rf { zones: Vec<String> },
    Icnn { zones: Vec<IcnnZoneModel> },
}

impl ModelBundle {
    pub fn kind_name(&self) -> &'static str {
        self.zones.first().map_or("empty", ZoneModel::kind_name)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = match self.zones.first() {
            None => return Err(Error::invalid("cannot save an empty model bundle")),
            Some(ZoneModel::Armax(_)) => BundleFile::Armax {
                zones: self
                    .zones
                    .iter()
                    .map(|z| match z {
                        ZoneModel::Armax(m) => Ok(m.clone()),
                        _ => Err(Error::invalid("mixed model families in one bundle")),
                    })
                    .collect::<Result<_>>()?,
            },
            Some(ZoneModel::Icnn(_)) => BundleFile::Icnn {
                zones: self
                    .zones
                    .iter()
                    .map(|z| match z {
                        ZoneModel::Icnn(m) => Ok(m.clone()),
                        _ => Err(Error::invalid("mixed model families in one bundle")),
                    })
                    .collect::<Result<_>>()?,
            },
            Some(ZoneModel::Rf(_)) => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "model".into());
                let mut names = Vec::new();
                for (i, z) in self.zones.iter().enumerate() {
                    let ZoneModel::Rf(m) = z else {
                        return Err(Error::invalid("mixed model families in one bundle"));
                    };
                    let name = format!("{stem}.zone{}.json", i + 1);
                    m.save(path.with_file_name(&name))?;
                    names.push(name);
                }
                BundleFile::Rf { zones: names }
            }
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: BundleFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let zones = match file {
            BundleFile::Armax { zones } => {
                for m in &zones {
                    if m.theta.len() != m.config.degrees_of_freedom() {
                        return Err(Error::DimensionMismatch {
                            expected: m.config.degrees_of_freedom(),
                            got: m.theta.len(),
                        });
                    }
                }
                zones.into_iter().map(ZoneModel::Armax).collect()
            }
            BundleFile::Rf { zones } => zones
                .iter()
                .map(|n| RfModel::load(path.with_file_name(n)).map(ZoneModel::Rf))
                .collect::<Result<_>>()?,
            BundleFile::Icnn { zones } => zones.into_iter().map(ZoneModel::Icnn).collect(),
        };
        Ok(Self { zones })
    }
}
