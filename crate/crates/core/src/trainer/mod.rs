//! Model assembly, the three objectives and the alternating adversarial
//! training loop.
//!
//! Per main step the loop runs `n_critic` discriminator steps (extractor and
//! classifier frozen) followed by one extractor+classifier step on
//! `J_C - lambda * J_D` (discriminator frozen). Main batches walk one
//! seed-shuffled pass over the triples per epoch; discriminator batches are
//! read from the same shuffled stream through a separate, wrapping cursor,
//! so the main batch sequence does not depend on `n_critic` or lambda.

mod checkpoint;
mod config;
mod model;
mod scheme;

use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{CheckpointPolicy, EvalCadence, TrainConfig};
pub use model::{
    build_model, compute_objectives, d_step, discriminator_accuracy, main_step, predict, Batch,
    GradRequest, KnowManModel, Predictions, StepReport,
};
pub use scheme::{scheme_registry, Architecture, FeatureBaseline, KnowMan, TrainScheme, WeakLogReg};

use crate::error::{Error, Result};
use crate::eval::metric;
use crate::features::FeatureMatrix;
use crate::lf::Triple;
use crate::seed::derived_rng;

/// Builds a freshly initialized model for `cfg`'s scheme.
pub fn build_for_config(
    input_dim: usize,
    n_classes: usize,
    n_lfs: usize,
    cfg: &TrainConfig,
) -> Result<KnowManModel> {
    let scheme = scheme_registry().get(&cfg.scheme)?;
    build_model(
        input_dim,
        n_classes,
        n_lfs,
        scheme.architecture(cfg),
        cfg.shared_hidden,
        cfg.dropout,
        cfg.seed,
    )
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub features: &'a FeatureMatrix,
    pub golds: &'a [usize],
}

#[derive(Debug, Clone, Copy)]
pub struct HeldOutTriples<'a> {
    pub features: &'a FeatureMatrix,
    pub triples: &'a [Triple],
}

#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a FeatureMatrix,
    pub triples: &'a [Triple],
    pub validation: Option<EvalSet<'a>>,
    pub heldout: Option<HeldOutTriples<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Best-validation model, or the final model under the final policy or
    /// when no validation data was given.
    pub model: KnowManModel,
    pub best_metric: Option<f64>,
    pub best_step: Option<u64>,
    pub evaluations: Vec<EvalRecord>,
    pub steps: Vec<StepReport>,
    pub d_steps: usize,
    /// Discriminator accuracy on held-out triples after each epoch.
    pub disc_accuracy: Vec<f64>,
    pub fell_back_to_final: bool,
    pub checkpoint: Option<PathBuf>,
}

fn batch_indices(perm: &[usize], start: usize, size: usize) -> Vec<usize> {
    (0..size.min(perm.len()))
        .map(|k| perm[(start + k) % perm.len()])
        .collect()
}

/// Runs training on `model` in place and returns the selected model.
pub fn train(
    model: &mut KnowManModel,
    data: &TrainData,
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let scheme = scheme_registry().get(&cfg.scheme)?;
    let lambda = scheme.lambda(cfg);
    let n_critic = scheme.critic_steps(cfg);
    if n_critic > 0 && model.disc.is_none() {
        return Err(Error::Invalid("scheme needs a discriminator but model has none".into()));
    }
    if data.triples.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 training triples, got {}",
            data.triples.len()
        )));
    }
    if data.features.dim != model.fs.input_dim() {
        return Err(Error::Shape(format!(
            "features have dimension {}, model expects {}",
            data.features.dim,
            model.fs.input_dim()
        )));
    }
    let opt_main = cfg.main_optimizer().build()?;
    let opt_d = cfg.discriminator_optimizer().build()?;
    let metric = metric(&cfg.metric, cfg.positive_class)?;
    let mut fell_back = false;
    if cfg.checkpoint_policy == CheckpointPolicy::Best && data.validation.is_none() {
        warn!("no validation data: keeping the final model instead of the best checkpoint");
        fell_back = true;
    }

    let n = data.triples.len();
    let bs = cfg.batch_size;
    let mut steps = Vec::new();
    let mut evaluations: Vec<EvalRecord> = Vec::new();
    let mut best: Option<(f64, u64, KnowManModel)> = None;
    let mut disc_accuracy = Vec::new();
    let mut d_cursor = 0usize;
    let mut d_count = 0usize;

    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut derived_rng(cfg.seed, "epoch-shuffle", epoch as u64));
        for chunk in perm.chunks(bs) {
            if chunk.len() < 2 {
                continue;
            }
            for _ in 0..n_critic {
                let ids = batch_indices(&perm, d_cursor, bs);
                d_cursor = (d_cursor + ids.len()) % n;
                let triples: Vec<Triple> = ids.iter().map(|&i| data.triples[i]).collect();
                d_step(model, &Batch::from_triples(data.features, &triples)?, opt_d.as_ref(), lambda)?;
                d_count += 1;
            }
            let triples: Vec<Triple> = chunk.iter().map(|&i| data.triples[i]).collect();
            let report = main_step(
                model,
                &Batch::from_triples(data.features, &triples)?,
                opt_main.as_ref(),
                lambda,
            )?;
            steps.push(report);
            if let Some(val) = &data.validation {
                if cfg.eval_cadence.due(model.main_steps) {
                    let preds = predict(model, val.features)?;
                    let m = metric.compute(&preds.classes, val.golds);
                    evaluations.push(EvalRecord {
                        step: model.main_steps,
                        epoch,
                        metric: m,
                    });
                    if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                        best = Some((m, model.main_steps, model.clone()));
                    }
                }
            }
        }
        if let Some(h) = &data.heldout {
            if model.disc.is_some() && !h.triples.is_empty() {
                disc_accuracy.push(discriminator_accuracy(model, h.features, h.triples)?);
            }
        }
    }

    let best_metric = best.as_ref().map(|(m, _, _)| *m);
    let best_step = best.as_ref().map(|(_, s, _)| *s);
    let selected = match (cfg.checkpoint_policy, best) {
        (CheckpointPolicy::Best, Some((_, _, m))) => m,
        _ => model.clone(),
    };
    let checkpoint = match checkpoint_path {
        Some(p) => {
            save_checkpoint(&selected, p)?;
            Some(p.to_path_buf())
        }
        None => None,
    };
    Ok(TrainResult {
        model: selected,
        best_metric,
        best_step,
        evaluations,
        steps,
        d_steps: d_count,
        disc_accuracy,
        fell_back_to_final: fell_back,
        checkpoint,
    })
}

/// Metrics history as line-delimited JSON: one record per main step with
/// the validation metric when it was evaluated at that step.
pub fn write_history(result: &TrainResult, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Line {
        step: u64,
        j_c: f64,
        j_d: f64,
        j_fs: f64,
        val_metric: Option<f64>,
    }
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut evals = result.evaluations.iter().peekable();
    for r in &result.steps {
        let step = r.step + 1;
        let mut val_metric = None;
        while let Some(e) = evals.peek() {
            if e.step > step {
                break;
            }
            if e.step == step {
                val_metric = Some(e.metric);
            }
            evals.next();
        }
        let line = Line {
            step,
            j_c: r.j_c,
            j_d: r.j_d,
            j_fs: r.j_fs,
            val_metric,
        };
        serde_json::to_writer(&mut out, &line).expect("history line");
        out.write_all(b"\n").expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
