//! Policy optimisation: REINFORCE for the toy experiments and the tabular
//! SAMBO loop.

mod pg;
mod sambo;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierTrainConfig;
use crate::error::{Error, Result};

pub use pg::{
    episode_gradient, train_pg_model_bias, train_pg_policy_shift, ShiftStateSource,
};
pub use sambo::{sambo_train, sambo_train_with_ensemble, SamboOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    Vanilla,
    Sar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rollouts_per_update: usize,
    pub horizon: usize,
    /// Policy-gradient step size, also the actor step size in SAMBO.
    pub learning_rate: f64,
    pub entropy_coeff: f64,
    /// Weight of the newest batch in the running-mean baseline.
    pub baseline_rate: f64,
    /// Probability that a SAMBO batch element comes from the real data.
    pub real_ratio: f64,
    pub batch_size: usize,
    pub rollout_h: usize,
    pub rollout_b: usize,
    pub policy_updates: usize,
    pub critic_lr: f64,
    pub ensemble_members: usize,
    pub smoothing: f64,
    pub model_capacity: Option<usize>,
    pub classifier: ClassifierTrainConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 300,
            rollouts_per_update: 32,
            horizon: 120,
            learning_rate: 0.5,
            entropy_coeff: 0.0,
            baseline_rate: 0.1,
            real_ratio: 0.05,
            batch_size: 256,
            rollout_h: 5,
            rollout_b: 50,
            policy_updates: 10,
            critic_lr: 0.5,
            ensemble_members: crate::model::DEFAULT_MEMBERS,
            smoothing: crate::model::DEFAULT_SMOOTHING,
            model_capacity: None,
            classifier: ClassifierTrainConfig {
                steps: 200,
                ..ClassifierTrainConfig::default()
            },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iterations", self.iterations),
            ("rollouts_per_update", self.rollouts_per_update),
            ("horizon", self.horizon),
            ("batch_size", self.batch_size),
            ("rollout_h", self.rollout_h),
            ("rollout_b", self.rollout_b),
            ("policy_updates", self.policy_updates),
            ("ensemble_members", self.ensemble_members),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::Config("train.real_ratio must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_rate) {
            return Err(Error::Config("train.baseline_rate must lie in [0,1]".into()));
        }
        if !(self.learning_rate >= 0.0 && self.critic_lr >= 0.0 && self.entropy_coeff >= 0.0) {
            return Err(Error::Config(
                "train step sizes and entropy_coeff must be non-negative".into(),
            ));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("train.smoothing must be positive".into()));
        }
        self.classifier.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub true_env_return: f64,
    pub model_estimated_return: f64,
    pub kl_to_behavior: f64,
    pub mean_sar: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub records: Vec<CurveRecord>,
}

impl TrainingCurve {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_return(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.true_env_return)
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.true_env_return).collect()
    }

    pub fn mean_kl(&self) -> f64 {
        self.records.iter().map(|r| r.kl_to_behavior).sum::<f64>() / self.records.len() as f64
    }
}

/// First index at which `curve` reaches `frac` of its last value.
pub fn updates_to_fraction(curve: &[f64], frac: f64) -> usize {
    let target = frac * curve.last().copied().unwrap_or(0.0);
    curve.iter().position(|&r| r >= target).unwrap_or(curve.len())
}
