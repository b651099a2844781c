//! Run configuration files for `train` and `eval` (TOML, versioned).

use std::path::Path;

use serde::Deserialize;

use crate::attention::{Encoder, ModelConfig};
use crate::baseline::RopeExponent;
use crate::error::{Error, Result};
use crate::geo::SphereModel;
use crate::spherical::{EncodingMode, PadPolicy};
use crate::tasks::{OptimizerKind, TaskConfig, TaskKind, TokenShape, TrainConfig};

pub const CONFIG_VERSION: u32 = 1;

/// Printed by `georope train --print-schema`.
pub const SCHEMA: &str = r#"# georope run configuration, version 1 (TOML). All keys optional except `version`.
version = 1

[model]
dim = 12                    # feature dimension d
heads = 1                   # must divide dim
layers = 1
ff_width = 0                # feed-forward hidden width, 0 = none
seed = 0
encoder = "spherical"       # none | sinusoidal | rope | spherical
mode = "uniform"            # spherical only: uniform | multifreq | as-printed
base = 10000.0              # multifreq base, > 1
pad = false                 # spherical only: pass through trailing coordinates when dim % 3 != 0
rope_exponent = "odd-offset"  # rope only: odd-offset | canonical

[task]
kind = "nearest"            # nearest | proximity
tau_m = 500000.0            # proximity temperature in meters, > 0
n_tokens = 16
train_instances = 2000
eval_instances = 500
feature_mean = 1.0
feature_noise = 0.5
radius_m = 6371000.0
seed = 0

[train]
optimizer = "adam"          # adam | sgd (adam uses beta1=0.9, beta2=0.999, eps=1e-8)
learning_rate = 0.02
steps = 300
batch_size = 32
seed = 0
"#;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    #[serde(default)]
    model: RawModel,
    #[serde(default)]
    task: RawTask,
    #[serde(default)]
    train: RawTrain,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    dim: usize,
    heads: usize,
    layers: usize,
    ff_width: usize,
    seed: u64,
    encoder: String,
    mode: String,
    base: f64,
    pad: bool,
    rope_exponent: String,
}

impl Default for RawModel {
    fn default() -> Self {
        Self {
            dim: 12,
            heads: 1,
            layers: 1,
            ff_width: 0,
            seed: 0,
            encoder: "spherical".into(),
            mode: "uniform".into(),
            base: 10_000.0,
            pad: false,
            rope_exponent: "odd-offset".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTask {
    kind: String,
    tau_m: f64,
    n_tokens: usize,
    train_instances: usize,
    eval_instances: usize,
    feature_mean: f64,
    feature_noise: f64,
    radius_m: f64,
    seed: u64,
}

impl Default for RawTask {
    fn default() -> Self {
        Self {
            kind: "nearest".into(),
            tau_m: 500_000.0,
            n_tokens: 16,
            train_instances: 2000,
            eval_instances: 500,
            feature_mean: 1.0,
            feature_noise: 0.5,
            radius_m: crate::geo::EARTH_RADIUS_M,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTrain {
    optimizer: String,
    learning_rate: f64,
    steps: usize,
    batch_size: usize,
    seed: u64,
}

impl Default for RawTrain {
    fn default() -> Self {
        Self {
            optimizer: "adam".into(),
            learning_rate: 0.02,
            steps: 300,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub train: TrainConfig,
}

/// Builds an encoder from its CLI/config spelling.
pub fn parse_encoder(name: &str, mode: &str, base: f64, pad: bool, rope_exponent: &str) -> Result<Encoder> {
    match name {
        "none" => Ok(Encoder::None),
        "sinusoidal" => Ok(Encoder::Sinusoidal),
        "rope" => {
            let exponent = match rope_exponent {
                "odd-offset" => RopeExponent::OddOffset,
                "canonical" => RopeExponent::Canonical,
                other => return Err(Error::Config(format!("unknown rope exponent {other:?}"))),
            };
            Ok(Encoder::Rope { exponent })
        }
        "spherical" => {
            let mode = match mode {
                "uniform" => EncodingMode::UniformAngle,
                "multifreq" => EncodingMode::MultiFrequency { base },
                "as-printed" => EncodingMode::AsPrinted,
                other => return Err(Error::Config(format!("unknown spherical mode {other:?}"))),
            };
            let pad = if pad {
                PadPolicy::ZeroPad
            } else {
                PadPolicy::RejectNonMultipleOf3
            };
            Ok(Encoder::Spherical { mode, pad })
        }
        other => Err(Error::Config(format!("unknown encoder {other:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if raw.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                raw.version
            )));
        }
        let m = &raw.model;
        let model = ModelConfig {
            dim: m.dim,
            heads: m.heads,
            layers: m.layers,
            ff_width: m.ff_width,
            seed: m.seed,
            encoder: parse_encoder(&m.encoder, &m.mode, m.base, m.pad, &m.rope_exponent)?,
        };
        model.validate()?;

        let t = &raw.task;
        let kind = match t.kind.as_str() {
            "nearest" => TaskKind::NearestNeighbor,
            "proximity" => {
                if !(t.tau_m > 0.0) {
                    return Err(Error::Config(format!("tau_m must be > 0, got {}", t.tau_m)));
                }
                TaskKind::Proximity { tau: t.tau_m }
            }
            other => return Err(Error::Config(format!("unknown task kind {other:?}"))),
        };
        if t.n_tokens < 2 {
            return Err(Error::Config("n_tokens must be at least 2".into()));
        }
        let task = TaskConfig {
            kind,
            shape: TokenShape {
                n_tokens: t.n_tokens,
                dim: model.dim,
                feature_mean: t.feature_mean,
                feature_noise: t.feature_noise,
                sphere: SphereModel::new(t.radius_m)?,
            },
            train_instances: t.train_instances,
            eval_instances: t.eval_instances,
            seed: t.seed,
        };

        let r = &raw.train;
        let optimizer = match r.optimizer.as_str() {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd,
            other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
        };
        let train = TrainConfig {
            learning_rate: r.learning_rate,
            steps: r.steps,
            batch_size: r.batch_size,
            seed: r.seed,
            optimizer,
        };
        train.validate()?;
        Ok(Self { model, task, train })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Uses one seed for model initialization, data and batch sampling.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.task.seed = seed;
        self.train.seed = seed;
    }

    pub fn set_encoder(&mut self, encoder: Encoder) -> Result<()> {
        self.model.encoder = encoder;
        self.model.validate()
    }
}
