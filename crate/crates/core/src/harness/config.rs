use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{BehaviorKind, BiasSpec, GridSpec};
use crate::error::{Error, Result};
use crate::sar::{SarConfig, SarMode};
use crate::train::{ShiftStateSource, TrainConfig};
use crate::verify::VerifyConfig;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "SAMBO_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ToyModelBias,
    ToyPolicyShift,
    Sambo,
    Verify,
    Ablation,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ToyModelBias => "toy-model-bias",
            ExperimentKind::ToyPolicyShift => "toy-policy-shift",
            ExperimentKind::Sambo => "sambo",
            ExperimentKind::Verify => "verify",
            ExperimentKind::Ablation => "ablation",
        }
    }

    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::ToyModelBias,
        ExperimentKind::ToyPolicyShift,
        ExperimentKind::Sambo,
        ExperimentKind::Verify,
        ExperimentKind::Ablation,
    ];
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads for running cells; 0 lets the pool decide.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub behaviors: Vec<BehaviorKind>,
    /// Logit on L for the opposite-of-optimal behaviour policy.
    pub opposite_sharpness: f64,
    pub state_source: ShiftStateSource,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            behaviors: vec![BehaviorKind::Uniform, BehaviorKind::Opposite],
            opposite_sharpness: 3.0,
            state_source: ShiftStateSource::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamboSection {
    pub dataset_size: usize,
    pub behavior: BehaviorKind,
    pub behavior_sharpness: f64,
}

impl Default for SamboSection {
    fn default() -> Self {
        SamboSection {
            dataset_size: 10_000,
            behavior: BehaviorKind::Uniform,
            behavior_sharpness: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSpec,
    pub bias: BiasSpec,
    pub sar: SarConfig,
    pub train: TrainConfig,
    pub toy: ToyConfig,
    pub sambo: SamboSection,
    pub verify: VerifyConfig,
}

/// Policy-gradient settings shared by both toy experiments.
pub fn toy_train_defaults(kind: ExperimentKind) -> TrainConfig {
    match kind {
        ExperimentKind::ToyPolicyShift => TrainConfig {
            iterations: 1000,
            rollouts_per_update: 256,
            horizon: 120,
            learning_rate: 1.0,
            ..TrainConfig::default()
        },
        _ => TrainConfig {
            iterations: 300,
            rollouts_per_update: 32,
            horizon: 120,
            learning_rate: 0.5,
            ..TrainConfig::default()
        },
    }
}

pub fn sambo_train_defaults() -> TrainConfig {
    TrainConfig {
        iterations: 60,
        learning_rate: 1.0,
        entropy_coeff: 0.02,
        model_capacity: Some(1000),
        ..TrainConfig::default()
    }
}

impl ExperimentConfig {
    /// Full configuration with every default for `kind` filled in.
    pub fn defaults_for(kind: ExperimentKind) -> Self {
        let (sar, train) = match kind {
            ExperimentKind::ToyModelBias => (
                SarConfig {
                    alpha: 0.05,
                    beta: 0.0,
                    mode: SarMode::PracticalExact,
                    ..SarConfig::default()
                },
                toy_train_defaults(kind),
            ),
            ExperimentKind::ToyPolicyShift => (
                SarConfig {
                    alpha: 0.0,
                    beta: 0.3,
                    mode: SarMode::PracticalExact,
                    ..SarConfig::default()
                },
                toy_train_defaults(kind),
            ),
            _ => (SarConfig::default(), sambo_train_defaults()),
        };
        ExperimentConfig {
            experiment: ExperimentSection {
                kind,
                seeds: vec![0, 1, 2, 3],
                output_dir: None,
                threads: 0,
            },
            grid: GridSpec::default(),
            bias: BiasSpec::default(),
            sar,
            train,
            toy: ToyConfig::default(),
            sambo: SamboSection::default(),
            verify: VerifyConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind = user
            .get("experiment")
            .and_then(|e| e.get("kind"))
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::Config("missing `experiment.kind`".into()))?
            .parse::<ExperimentKind>()?;
        let defaults = toml::Table::try_from(ExperimentConfig::defaults_for(kind))
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = defaults;
        for (key, value) in user {
            if !merged.contains_key(&key) && key != "experiment" {
                return Err(Error::Config(format!("unknown section `[{key}]`")));
            }
            overlay(&mut merged, key, value);
        }
        let cfg: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::InvalidInput(m) => Error::Config(m),
            other => other,
        };
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds needs at least one seed".into()));
        }
        self.grid.validate().map_err(cfg)?;
        self.bias.validate().map_err(cfg)?;
        self.sar.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        if self.toy.behaviors.is_empty() {
            return Err(Error::Config("toy.behaviors needs at least one entry".into()));
        }
        if self.sambo.dataset_size == 0 {
            return Err(Error::Config("sambo.dataset_size must be positive".into()));
        }
        Ok(())
    }

    /// CLI flag (which clap also fills from the environment), then config,
    /// then environment, then `results`.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.experiment.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

fn overlay(base: &mut toml::Table, key: String, value: toml::Value) {
    match (base.get_mut(&key), value) {
        (Some(toml::Value::Table(b)), toml::Value::Table(v)) => {
            for (k, x) in v {
                overlay(b, k, x);
            }
        }
        (_, v) => {
            base.insert(key, v);
        }
    }
}
