use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scheme::Architecture;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::lf::Triple;
use crate::nn::{nll_loss, step_params, LayerSpec, Matrix, Mode, Network, Optimizer, Param, Parameterized};
use crate::seed::derive_seed;

/// Shared extractor `fs`, classifier `clf` and optional LF discriminator
/// `disc`, plus the step counters that drive per-step dropout seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowManModel {
    pub fs: Network,
    pub clf: Network,
    pub disc: Option<Network>,
    pub n_classes: usize,
    pub n_lfs: usize,
    pub seed: u64,
    pub main_steps: u64,
    pub d_steps: u64,
}

impl Parameterized for KnowManModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fs.params();
        v.extend(self.clf.params());
        if let Some(d) = &self.disc {
            v.extend(d.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fs.params_mut();
        v.extend(self.clf.params_mut());
        if let Some(d) = &mut self.disc {
            v.extend(d.params_mut());
        }
        v
    }
}

fn extractor_specs(input_dim: usize, hidden: usize, layers: usize, dropout: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut width = input_dim;
    for _ in 0..layers {
        specs.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: hidden,
        });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Dropout { p: dropout });
        width = hidden;
    }
    specs
}

/// `[dropout -> dense -> batchnorm -> relu] x (layers - 1) -> dense -> log_softmax`.
fn head_specs(width: usize, out: usize, layers: usize, dropout: f64) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    for _ in 1..layers {
        specs.push(LayerSpec::Dropout { p: dropout });
        specs.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: width,
        });
        specs.push(LayerSpec::BatchNorm { dim: width });
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::Dense {
        in_dim: width,
        out_dim: out,
    });
    specs.push(LayerSpec::LogSoftmax);
    specs
}

pub fn build_model(
    input_dim: usize,
    n_classes: usize,
    n_lfs: usize,
    arch: Architecture,
    shared_hidden: usize,
    dropout: f64,
    seed: u64,
) -> Result<KnowManModel> {
    if input_dim == 0 || n_classes < 2 || shared_hidden == 0 || arch.c_layers == 0 {
        return Err(Error::Shape(format!(
            "invalid model dims: input {input_dim}, classes {n_classes}, hidden {shared_hidden}, c_layers {}",
            arch.c_layers
        )));
    }
    let fs = Network::new(
        input_dim,
        &extractor_specs(input_dim, shared_hidden, arch.f_layers, dropout),
        derive_seed(seed, "init-fs", 0),
    )?;
    let width = fs.output_dim();
    let clf = Network::new(
        width,
        &head_specs(width, n_classes, arch.c_layers, dropout),
        derive_seed(seed, "init-c", 0),
    )?;
    let disc = match arch.d_layers {
        Some(layers) => {
            if n_lfs == 0 || layers == 0 {
                return Err(Error::Shape("discriminator needs >= 1 LF and >= 1 layer".into()));
            }
            Some(Network::new(
                width,
                &head_specs(width, n_lfs, layers, dropout),
                derive_seed(seed, "init-d", 0),
            )?)
        }
        None => None,
    };
    Ok(KnowManModel {
        fs,
        clf,
        disc,
        n_classes,
        n_lfs,
        seed,
        main_steps: 0,
        d_steps: 0,
    })
}

/// Dense inputs with classifier and discriminator targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub lfs: Vec<usize>,
}

impl Batch {
    pub fn from_triples(features: &FeatureMatrix, triples: &[Triple]) -> Result<Self> {
        let ids: Vec<usize> = triples.iter().map(|t| t.instance).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= features.len()) {
            return Err(Error::Shape(format!("triple refers to instance {bad} beyond features")));
        }
        Ok(Self {
            x: Matrix::from_vec(ids.len(), features.dim, features.dense_rows(&ids))?,
            labels: triples.iter().map(|t| t.label).collect(),
            lfs: triples.iter().map(|t| t.lf).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub j_c: f64,
    /// Zero when the model has no discriminator.
    pub j_d: f64,
    pub j_fs: f64,
    pub lambda: f64,
    pub elapsed_secs: f64,
}

/// Which gradients `compute_objectives` accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRequest {
    None,
    /// `J_C - lambda * J_D` into the extractor, `J_C` into the classifier.
    Shared,
    /// `J_C` through classifier and extractor.
    Classifier,
    /// `J_D` through discriminator and extractor.
    Discriminator,
    /// `J_D` into the discriminator only.
    DiscriminatorHead,
}

#[derive(Debug, Clone, Copy)]
struct Modes {
    fs: Mode,
    clf: Mode,
    disc: Mode,
}

fn run(net: &mut Network, x: &Matrix, mode: Mode) -> Result<(Matrix, crate::nn::Cache)> {
    match mode {
        Mode::Train { .. } => net.forward(x, mode),
        _ => net.forward_frozen(x, mode),
    }
}

fn objectives(
    model: &mut KnowManModel,
    batch: &Batch,
    lambda: f64,
    request: GradRequest,
    modes: Modes,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let (h, fs_cache) = run(&mut model.fs, &batch.x, modes.fs)?;
    let (logp_c, c_cache) = run(&mut model.clf, &h, modes.clf)?;
    let (j_c, g_c) = nll_loss(&logp_c, &batch.labels)?;
    let disc_out = match &mut model.disc {
        Some(d) => {
            let (logp_d, d_cache) = run(d, &h, modes.disc)?;
            let (j_d, g_d) = nll_loss(&logp_d, &batch.lfs)?;
            Some((j_d, g_d, d_cache))
        }
        None => None,
    };
    let j_d = disc_out.as_ref().map_or(0.0, |(j, _, _)| *j);
    let need_disc = || Error::Invalid("request needs a discriminator".into());
    match request {
        GradRequest::None => {}
        GradRequest::Shared => {
            let mut dh = model.clf.backward(&c_cache, &g_c, true)?.expect("input grad");
            if lambda != 0.0 {
                let (_, g_d, d_cache) = disc_out.as_ref().ok_or_else(need_disc)?;
                let disc = model.disc.as_mut().expect("checked");
                let dh_d = disc.backward(d_cache, g_d, true)?.expect("input grad");
                // The discriminator is only a conduit here.
                disc.zero_grads();
                for (a, b) in dh.data.iter_mut().zip(&dh_d.data) {
                    *a -= lambda * b;
                }
            }
            model.fs.backward(&fs_cache, &dh, false)?;
        }
        GradRequest::Classifier => {
            let dh = model.clf.backward(&c_cache, &g_c, true)?.expect("input grad");
            model.fs.backward(&fs_cache, &dh, false)?;
        }
        GradRequest::Discriminator => {
            let (_, g_d, d_cache) = disc_out.as_ref().ok_or_else(need_disc)?;
            let disc = model.disc.as_mut().expect("checked");
            let dh = disc.backward(d_cache, g_d, true)?.expect("input grad");
            model.fs.backward(&fs_cache, &dh, false)?;
        }
        GradRequest::DiscriminatorHead => {
            let (_, g_d, d_cache) = disc_out.as_ref().ok_or_else(need_disc)?;
            model.disc.as_mut().expect("checked").backward(d_cache, g_d, false)?;
        }
    }
    Ok((j_c, j_d))
}

fn step_mode(model_seed: u64, role: &str, step: u64, train: bool) -> Mode {
    let seed = derive_seed(model_seed, role, step);
    if train {
        Mode::Train { seed }
    } else {
        Mode::Frozen { seed }
    }
}

/// Evaluates `J_C`, `J_D` and `J_Fs = J_C - lambda * J_D` on `batch` with
/// all networks in frozen mode (dropout masks from `seed`, batch statistics
/// without running-stat updates), accumulating the requested gradients.
pub fn compute_objectives(
    model: &mut KnowManModel,
    batch: &Batch,
    lambda: f64,
    request: GradRequest,
    seed: u64,
) -> Result<StepReport> {
    let start = Instant::now();
    let modes = Modes {
        fs: step_mode(seed, "obj-fs", 0, false),
        clf: step_mode(seed, "obj-c", 0, false),
        disc: step_mode(seed, "obj-d", 0, false),
    };
    let (j_c, j_d) = objectives(model, batch, lambda, request, modes)?;
    Ok(StepReport {
        step: model.main_steps,
        j_c,
        j_d,
        j_fs: j_c - lambda * j_d,
        lambda,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// One discriminator update. Extractor and classifier run frozen (their
/// parameters and buffers are untouched); only the discriminator moves.
pub fn d_step(
    model: &mut KnowManModel,
    batch: &Batch,
    optimizer: &dyn Optimizer,
    lambda: f64,
) -> Result<StepReport> {
    let start = Instant::now();
    if model.disc.is_none() {
        return Err(Error::Invalid("d_step on a model without discriminator".into()));
    }
    let step = model.d_steps;
    let modes = Modes {
        fs: step_mode(model.seed, "d-step-fs", step, false),
        clf: step_mode(model.seed, "d-step-c", step, false),
        disc: step_mode(model.seed, "d-step-d", step, true),
    };
    let disc = model.disc.as_mut().expect("checked");
    disc.zero_grads();
    let (j_c, j_d) = objectives(model, batch, lambda, GradRequest::DiscriminatorHead, modes)?;
    let disc = model.disc.as_mut().expect("checked");
    step_params(optimizer, disc.params_mut())?;
    model.d_steps += 1;
    Ok(StepReport {
        step,
        j_c,
        j_d,
        j_fs: j_c - lambda * j_d,
        lambda,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// One update of extractor and classifier on `J_C - lambda * J_D`. The
/// discriminator runs forward (frozen) only to route the reversed gradient.
pub fn main_step(
    model: &mut KnowManModel,
    batch: &Batch,
    optimizer: &dyn Optimizer,
    lambda: f64,
) -> Result<StepReport> {
    let start = Instant::now();
    let step = model.main_steps;
    let modes = Modes {
        fs: step_mode(model.seed, "main-fs", step, true),
        clf: step_mode(model.seed, "main-c", step, true),
        disc: step_mode(model.seed, "main-d", step, false),
    };
    model.fs.zero_grads();
    model.clf.zero_grads();
    let (j_c, j_d) = objectives(model, batch, lambda, GradRequest::Shared, modes)?;
    let mut params = model.fs.params_mut();
    params.extend(model.clf.params_mut());
    step_params(optimizer, params)?;
    model.main_steps += 1;
    Ok(StepReport {
        step,
        j_c,
        j_d,
        j_fs: j_c - lambda * j_d,
        lambda,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub classes: Vec<usize>,
    pub log_probs: Matrix,
}

const PREDICT_CHUNK: usize = 256;

fn infer_chunks(model: &KnowManModel, features: &FeatureMatrix, head: &Network) -> Result<Matrix> {
    if features.dim != model.fs.input_dim() {
        return Err(Error::Shape(format!(
            "features have dimension {}, model expects {}",
            features.dim,
            model.fs.input_dim()
        )));
    }
    let ids: Vec<usize> = (0..features.len()).collect();
    let parts: Vec<Matrix> = ids
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let x = Matrix::from_vec(chunk.len(), features.dim, features.dense_rows(chunk))?;
            head.infer(&model.fs.infer(&x)?)
        })
        .collect::<Result<_>>()?;
    let cols = head.output_dim();
    let data = parts.into_iter().flat_map(|m| m.data).collect();
    Matrix::from_vec(features.len(), cols, data)
}

/// Eval-mode class predictions: argmax of the classifier over the extractor.
pub fn predict(model: &KnowManModel, features: &FeatureMatrix) -> Result<Predictions> {
    let log_probs = infer_chunks(model, features, &model.clf)?;
    Ok(Predictions {
        classes: log_probs.argmax_rows(),
        log_probs,
    })
}

/// Fraction of triples whose LF the discriminator identifies (eval mode).
pub fn discriminator_accuracy(
    model: &KnowManModel,
    features: &FeatureMatrix,
    triples: &[Triple],
) -> Result<f64> {
    let disc = model
        .disc
        .as_ref()
        .ok_or_else(|| Error::Invalid("model has no discriminator".into()))?;
    if triples.is_empty() {
        return Err(Error::Invalid("no triples to score".into()));
    }
    let pred = infer_chunks(model, features, disc)?.argmax_rows();
    let hits = triples.iter().filter(|t| pred[t.instance] == t.lf).count();
    Ok(hits as f64 / triples.len() as f64)
}
