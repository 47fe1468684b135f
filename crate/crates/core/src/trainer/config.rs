use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scheme::scheme_registry;
use crate::error::{Error, Result};
use crate::eval::metric_registry;
use crate::lf::tie_policies;
use crate::nn::{optimizer_registry, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCadence {
    PerBatch,
    EveryKSteps(u64),
}

impl EvalCadence {
    pub fn due(self, main_steps_done: u64) -> bool {
        match self {
            EvalCadence::PerBatch => true,
            EvalCadence::EveryKSteps(k) => k > 0 && main_steps_done % k == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// Keep the model with the best validation metric.
    Best,
    /// Keep the model after the last step.
    Final,
}

/// Training run configuration. Defaults follow the Spam TF-IDF setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: String,
    pub lambda: f64,
    /// Discriminator steps per main step.
    pub n_critic: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_main: f64,
    pub lr_d: f64,
    pub optimizer_main: String,
    pub optimizer_d: String,
    pub weight_decay_main: f64,
    pub dropout: f64,
    pub shared_hidden: usize,
    pub num_f_layers: usize,
    pub num_c_layers: usize,
    pub num_d_layers: usize,
    pub eval_cadence: EvalCadence,
    pub checkpoint_policy: CheckpointPolicy,
    pub metric: String,
    pub positive_class: usize,
    pub tie_policy: String,
    pub min_df: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: "knowman".into(),
            lambda: 2.0,
            n_critic: 5,
            batch_size: 32,
            epochs: 10,
            lr_main: 1e-4,
            lr_d: 1e-4,
            optimizer_main: "adam".into(),
            optimizer_d: "adam".into(),
            weight_decay_main: 0.0,
            dropout: 0.4,
            shared_hidden: 700,
            num_f_layers: 1,
            num_c_layers: 1,
            num_d_layers: 1,
            eval_cadence: EvalCadence::PerBatch,
            checkpoint_policy: CheckpointPolicy::Best,
            metric: "accuracy".into(),
            positive_class: 1,
            tie_policy: "majority_drop_ties".into(),
            min_df: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        for (name, lr) in [("lr_main", self.lr_main), ("lr_d", self.lr_d)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be > 0, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.weight_decay_main < 0.0 {
            return bad("weight_decay_main must be >= 0".into());
        }
        if self.shared_hidden == 0 {
            return bad("shared_hidden must be > 0".into());
        }
        if self.num_c_layers == 0 || self.num_d_layers == 0 {
            return bad("classifier and discriminator need at least one layer".into());
        }
        if self.min_df == 0 {
            return bad("min_df must be >= 1".into());
        }
        if let EvalCadence::EveryKSteps(0) = self.eval_cadence {
            return bad("eval cadence every_k_steps needs k >= 1".into());
        }
        let checks: [(&str, bool, Vec<String>); 5] = [
            ("scheme", scheme_registry().contains(&self.scheme), scheme_registry().names()),
            (
                "optimizer_main",
                optimizer_registry().contains(&self.optimizer_main),
                optimizer_registry().names(),
            ),
            (
                "optimizer_d",
                optimizer_registry().contains(&self.optimizer_d),
                optimizer_registry().names(),
            ),
            ("metric", metric_registry().contains(&self.metric), metric_registry().names()),
            (
                "tie_policy",
                tie_policies().contains(&self.tie_policy),
                tie_policies().names(),
            ),
        ];
        for (field, ok, names) in checks {
            if !ok {
                return bad(format!("unknown {field} (available: {})", names.join(", ")));
            }
        }
        Ok(())
    }

    pub fn main_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer_main.clone(),
            lr: self.lr_main,
            weight_decay: self.weight_decay_main,
            ..OptimizerConfig::default()
        }
    }

    pub fn discriminator_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer_d.clone(),
            lr: self.lr_d,
            ..OptimizerConfig::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}
