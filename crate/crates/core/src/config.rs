//! Run configuration: one validated tree covering every pipeline stage.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::ExpertConfig;
use crate::dynamics::DynamicsConfig;
use crate::error::{FalconError, Result};
use crate::error_model::DqConfig;
use crate::eval::{EpisodeConfig, SimSettings};
use crate::geometry::{builtin_track, CameraModel, Track};
use crate::imitation::{DcConfig, TrainConfig};
use crate::perception::{NoiseOracleConfig, NpeTrainConfig, PerceptionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Calibrated noise oracle around the true pose.
    Oracle,
    /// Keypoint regressor trained per track.
    Regressor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpeSection {
    /// Rendered observations per track.
    pub samples: usize,
    pub train: NpeTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionSection {
    pub backend: BackendKind,
    /// Oracle calibration per track name.
    pub oracle: BTreeMap<String, NoiseOracleConfig>,
    pub filter: PerceptionConfig,
    pub npe: NpeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModelSection {
    pub dq: DqConfig,
    /// Every k-th run is held out to measure interval coverage.
    pub holdout_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub episode: EpisodeConfig,
    /// Episodes per track and controller.
    pub seeds: usize,
    /// Any of `expert`, `dp`, `mm`.
    pub controllers: Vec<String>,
    /// Laps flown per track after each aggregation iteration (0 disables).
    pub dagger_eval_laps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Builtin track names or paths to track JSON files.
    pub tracks: Vec<String>,
    pub dynamics: DynamicsConfig,
    pub camera: CameraModel,
    pub expert: ExpertConfig,
    pub perception: PerceptionSection,
    pub error_model: ErrorModelSection,
    pub collection: DcConfig,
    pub training: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let names = ["circle", "uturn", "figure8"];
        Self {
            seed: 0,
            tracks: names.iter().map(|s| s.to_string()).collect(),
            dynamics: DynamicsConfig::default(),
            camera: CameraModel::default(),
            expert: ExpertConfig::default(),
            perception: PerceptionSection {
                backend: BackendKind::Oracle,
                oracle: names
                    .iter()
                    .map(|n| (n.to_string(), NoiseOracleConfig::for_track(n)))
                    .collect(),
                filter: PerceptionConfig::default(),
                npe: NpeSection {
                    samples: 20_000,
                    train: NpeTrainConfig::default(),
                },
            },
            error_model: ErrorModelSection {
                dq: DqConfig::default(),
                holdout_every: 3,
            },
            collection: DcConfig {
                record_every: 3,
                ..DcConfig::default()
            },
            training: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            eval: EvalSection {
                episode: EpisodeConfig::default(),
                seeds: 1,
                controllers: vec!["expert".into(), "dp".into(), "mm".into()],
                dagger_eval_laps: 0,
            },
        }
    }
}

pub const CONTROLLERS: [&str; 3] = ["expert", "dp", "mm"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| FalconError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `a.b.c=value` overrides. The value is parsed as JSON when
    /// possible and taken as a string otherwise; the path must already exist.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| {
                FalconError::Config(format!("override '{o}' is not of the form key=value"))
            })?;
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            for key in path.split('.') {
                node = match node {
                    Value::Object(map) => map.get_mut(key),
                    Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| FalconError::Config(format!("unknown config key '{path}'")))?;
            }
            *node = value;
        }
        let cfg: Self =
            serde_json::from_value(tree).map_err(|e| FalconError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tracks.is_empty() {
            return Err(FalconError::Config("no tracks configured".into()));
        }
        self.dynamics.validate()?;
        self.camera.validate()?;
        self.expert.validate()?;
        self.perception.filter.validate()?;
        self.perception.npe.train.validate()?;
        if self.perception.npe.samples < 10 {
            return Err(FalconError::Config(
                "perception.npe.samples must be at least 10".into(),
            ));
        }
        for o in self.perception.oracle.values() {
            o.validate()?;
        }
        self.error_model.dq.validate()?;
        if self.error_model.holdout_every < 2 {
            return Err(FalconError::Config(
                "error_model.holdout_every must be at least 2".into(),
            ));
        }
        self.collection.validate()?;
        self.training.validate()?;
        self.eval.episode.validate()?;
        if self.eval.seeds == 0 {
            return Err(FalconError::Config("eval.seeds must be positive".into()));
        }
        if let Some(c) = self
            .eval
            .controllers
            .iter()
            .find(|c| !CONTROLLERS.contains(&c.as_str()))
        {
            return Err(FalconError::Config(format!("unknown controller '{c}'")));
        }
        if self.eval.controllers.is_empty() {
            return Err(FalconError::Config("no controllers to evaluate".into()));
        }
        for track in self.load_tracks()? {
            if self.perception.backend == BackendKind::Oracle
                && !self.perception.oracle.contains_key(&track.name)
            {
                return Err(FalconError::Config(format!(
                    "no oracle calibration for track '{}' (set perception.oracle.{})",
                    track.name, track.name
                )));
            }
        }
        Ok(())
    }

    /// Resolves track entries: builtin names first, then JSON files.
    pub fn load_tracks(&self) -> Result<Vec<Track>> {
        self.tracks
            .iter()
            .map(|t| match builtin_track(t) {
                Some(track) => Ok(track),
                None if Path::new(t).exists() => Track::load(Path::new(t)),
                None => Err(FalconError::Config(format!(
                    "'{t}' is neither a builtin track nor a file"
                ))),
            })
            .collect()
    }

    pub fn sim_settings(&self) -> SimSettings {
        SimSettings {
            episode: self.eval.episode,
            dynamics: self.dynamics,
            expert: self.expert,
            camera: self.camera,
            perception: self.perception.filter,
        }
    }
}
