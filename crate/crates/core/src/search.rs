//! Seeded random search over the training hyperparameter space.
//!
//! Proposal strategies sit behind [`ConfigProposer`]; trials run in waves of
//! `parallelism` and are recorded in trial-index order, so results do not
//! depend on scheduling.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::seed::{derive_seed, derived_rng};
use crate::trainer::{EvalCadence, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Sampled log-uniformly, inclusive.
    pub batch_size: (usize, usize),
    pub dropout: (f64, f64),
    pub n_critic: Vec<usize>,
    pub lambda: (f64, f64),
    pub shared_hidden: (usize, usize),
    pub lr_main: Vec<f64>,
    pub lr_d: Vec<f64>,
    pub num_f_layers: (usize, usize),
    pub num_c_layers: (usize, usize),
    pub num_d_layers: (usize, usize),
    /// Evaluation interval in main steps; 1 means after every batch.
    pub eval_every: (u64, u64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            batch_size: (16, 1024),
            dropout: (0.1, 0.5),
            n_critic: vec![1, 5, 10, 50],
            lambda: (0.0, 5.0),
            shared_hidden: (100, 1000),
            lr_main: vec![1e-4, 5e-4, 1e-3],
            lr_d: vec![1e-4, 5e-4, 1e-3],
            num_f_layers: (1, 10),
            num_c_layers: (1, 10),
            num_d_layers: (1, 10),
            eval_every: (1, 500),
        }
    }
}

fn int_range<T: PartialOrd + Copy + std::fmt::Display>(name: &str, r: (T, T), min: T) -> Result<()> {
    if r.0 < min || r.0 > r.1 {
        return Err(Error::Config(format!("{name} range [{}, {}] invalid", r.0, r.1)));
    }
    Ok(())
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        int_range("batch_size", self.batch_size, 2)?;
        int_range("shared_hidden", self.shared_hidden, 1)?;
        int_range("num_f_layers", self.num_f_layers, 1)?;
        int_range("num_c_layers", self.num_c_layers, 1)?;
        int_range("num_d_layers", self.num_d_layers, 1)?;
        int_range("eval_every", self.eval_every, 1)?;
        if !(0.0 <= self.dropout.0 && self.dropout.0 <= self.dropout.1 && self.dropout.1 < 1.0) {
            return Err(Error::Config("dropout range must lie in [0, 1)".into()));
        }
        if !(0.0 <= self.lambda.0 && self.lambda.0 <= self.lambda.1 && self.lambda.1.is_finite()) {
            return Err(Error::Config("lambda range must be finite and >= 0".into()));
        }
        if self.n_critic.is_empty() || self.lr_main.is_empty() || self.lr_d.is_empty() {
            return Err(Error::Config("categorical choices must be non-empty".into()));
        }
        if self.lr_main.iter().chain(&self.lr_d).any(|&lr| !(lr > 0.0)) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        Ok(())
    }

    /// Draws every searched field independently from its own derived stream;
    /// other fields come from `base`.
    pub fn sample(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let rng = |field: &str| derived_rng(seed, field, 0);
        let uniform = |field: &str, (lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng(field).random_range(lo..=hi)
            }
        };
        let int = |field: &str, (lo, hi): (usize, usize)| rng(field).random_range(lo..=hi);
        let pick = |field: &str, xs: &[f64]| xs[rng(field).random_range(0..xs.len())];
        let (blo, bhi) = self.batch_size;
        let log_b = uniform("batch_size", ((blo as f64).ln(), ((bhi + 1) as f64).ln()));
        let batch_size = (log_b.exp().floor() as usize).clamp(blo, bhi);
        let eval_every = rng("eval_every").random_range(self.eval_every.0..=self.eval_every.1);
        TrainConfig {
            batch_size,
            dropout: uniform("dropout", self.dropout),
            n_critic: self.n_critic[rng("n_critic").random_range(0..self.n_critic.len())],
            lambda: uniform("lambda", self.lambda),
            shared_hidden: int("shared_hidden", self.shared_hidden),
            lr_main: pick("lr_main", &self.lr_main),
            lr_d: pick("lr_d", &self.lr_d),
            num_f_layers: int("num_f_layers", self.num_f_layers),
            num_c_layers: int("num_c_layers", self.num_c_layers),
            num_d_layers: int("num_d_layers", self.num_d_layers),
            eval_cadence: if eval_every == 1 {
                EvalCadence::PerBatch
            } else {
                EvalCadence::EveryKSteps(eval_every)
            },
            ..base.clone()
        }
    }
}

pub fn sample_config(space: &SearchSpace, seed: u64) -> TrainConfig {
    space.sample(&TrainConfig::default(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub metric: Option<f64>,
    pub runtime_secs: f64,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Proposes the next configuration to evaluate.
pub trait ConfigProposer: Send + Sync {
    fn name(&self) -> &'static str;
    fn propose(
        &self,
        space: &SearchSpace,
        base: &TrainConfig,
        index: usize,
        history: &[Trial],
        seed: u64,
    ) -> TrainConfig;
}

pub struct RandomProposer;

impl ConfigProposer for RandomProposer {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(
        &self,
        space: &SearchSpace,
        base: &TrainConfig,
        index: usize,
        _history: &[Trial],
        seed: u64,
    ) -> TrainConfig {
        space.sample(base, derive_seed(seed, "trial", index as u64))
    }
}

pub fn proposer_registry() -> Registry<dyn ConfigProposer> {
    let mut reg: Registry<dyn ConfigProposer> = Registry::new("proposer");
    reg.register("random", Arc::new(RandomProposer));
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Completed trials, best metric first; ties keep trial order.
    pub ranked: Vec<Trial>,
    pub failed: Vec<Trial>,
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&Trial> {
        self.ranked.first()
    }

    /// All trials in execution order.
    pub fn in_order(&self) -> Vec<&Trial> {
        let mut all: Vec<&Trial> = self.ranked.iter().chain(&self.failed).collect();
        all.sort_by_key(|t| t.index);
        all
    }
}

pub struct SearchOptions<'a> {
    pub budget: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub proposer: &'a dyn ConfigProposer,
}

/// Runs `budget` trials; `train_fn` returns the validation metric of a
/// trained configuration. Failing trials are recorded and skipped.
pub fn random_search<F>(
    space: &SearchSpace,
    base: &TrainConfig,
    opts: &SearchOptions,
    train_fn: F,
) -> Result<SearchOutcome>
where
    F: Fn(&TrainConfig) -> Result<f64> + Sync,
{
    space.validate()?;
    if opts.budget == 0 {
        return Err(Error::Config("search budget must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let mut trials: Vec<Trial> = Vec::with_capacity(opts.budget);
    while trials.len() < opts.budget {
        let start = trials.len();
        let end = (start + opts.parallelism.max(1)).min(opts.budget);
        let wave: Vec<(usize, TrainConfig)> = (start..end)
            .map(|i| {
                let mut cfg = opts.proposer.propose(space, base, i, &trials, opts.seed);
                cfg.seed = derive_seed(opts.seed, "trial-seed", i as u64);
                (i, cfg)
            })
            .collect();
        let results: Vec<Trial> = pool.install(|| {
            wave.into_par_iter()
                .map(|(index, config)| {
                    let t0 = Instant::now();
                    let outcome = config.validate().and_then(|_| train_fn(&config));
                    let runtime_secs = t0.elapsed().as_secs_f64();
                    let (metric, status, error) = match outcome {
                        Ok(m) if m.is_finite() => (Some(m), TrialStatus::Completed, None),
                        Ok(m) => (None, TrialStatus::Failed, Some(format!("non-finite metric {m}"))),
                        Err(e) => (None, TrialStatus::Failed, Some(e.to_string())),
                    };
                    Trial {
                        index,
                        seed: config.seed,
                        config,
                        metric,
                        runtime_secs,
                        status,
                        error,
                    }
                })
                .collect()
        });
        trials.extend(results);
    }
    let (mut ranked, failed): (Vec<Trial>, Vec<Trial>) = trials
        .into_iter()
        .partition(|t| t.status == TrialStatus::Completed);
    ranked.sort_by(|a, b| {
        let (ma, mb) = (a.metric.unwrap_or(f64::MIN), b.metric.unwrap_or(f64::MIN));
        mb.total_cmp(&ma).then(a.index.cmp(&b.index))
    });
    Ok(SearchOutcome { ranked, failed })
}

pub fn write_trials_log(outcome: &SearchOutcome, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for t in outcome.in_order() {
        serde_json::to_writer(&mut out, t).expect("trial serializes");
        out.write_all(b"\n").expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
