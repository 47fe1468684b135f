//! Training schemes: KnowMAN and the baselines that share its machinery.

use std::sync::Arc;

use super::TrainConfig;
use crate::registry::Registry;

/// Layer counts for one model build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub f_layers: usize,
    pub c_layers: usize,
    /// `None` builds no discriminator.
    pub d_layers: Option<usize>,
}

pub trait TrainScheme: Send + Sync {
    fn name(&self) -> &'static str;
    fn architecture(&self, cfg: &TrainConfig) -> Architecture;
    fn lambda(&self, cfg: &TrainConfig) -> f64;
    fn critic_steps(&self, cfg: &TrainConfig) -> usize;
}

/// Shared extractor, classifier and adversarial LF discriminator.
pub struct KnowMan;

impl TrainScheme for KnowMan {
    fn name(&self) -> &'static str {
        "knowman"
    }

    fn architecture(&self, cfg: &TrainConfig) -> Architecture {
        Architecture {
            f_layers: cfg.num_f_layers,
            c_layers: cfg.num_c_layers,
            d_layers: Some(cfg.num_d_layers),
        }
    }

    fn lambda(&self, cfg: &TrainConfig) -> f64 {
        cfg.lambda
    }

    fn critic_steps(&self, cfg: &TrainConfig) -> usize {
        cfg.n_critic
    }
}

/// Extractor and classifier only; equivalent to KnowMAN with lambda = 0.
pub struct FeatureBaseline;

impl TrainScheme for FeatureBaseline {
    fn name(&self) -> &'static str {
        "feature"
    }

    fn architecture(&self, cfg: &TrainConfig) -> Architecture {
        Architecture {
            f_layers: cfg.num_f_layers,
            c_layers: cfg.num_c_layers,
            d_layers: None,
        }
    }

    fn lambda(&self, _cfg: &TrainConfig) -> f64 {
        0.0
    }

    fn critic_steps(&self, _cfg: &TrainConfig) -> usize {
        0
    }
}

/// Logistic regression directly on the input features and weak labels.
pub struct WeakLogReg;

impl TrainScheme for WeakLogReg {
    fn name(&self) -> &'static str {
        "ws"
    }

    fn architecture(&self, _cfg: &TrainConfig) -> Architecture {
        Architecture {
            f_layers: 0,
            c_layers: 1,
            d_layers: None,
        }
    }

    fn lambda(&self, _cfg: &TrainConfig) -> f64 {
        0.0
    }

    fn critic_steps(&self, _cfg: &TrainConfig) -> usize {
        0
    }
}

pub fn scheme_registry() -> Registry<dyn TrainScheme> {
    let mut reg: Registry<dyn TrainScheme> = Registry::new("training scheme");
    reg.register("knowman", Arc::new(KnowMan));
    reg.register("feature", Arc::new(FeatureBaseline));
    reg.register("ws", Arc::new(WeakLogReg));
    reg
}
