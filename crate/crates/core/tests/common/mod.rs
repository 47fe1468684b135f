#![allow(dead_code)]

use knowman::features::FeatureMatrix;
use knowman::lf::Triple;
use knowman::nn::{
    finite_diff_check, nll_loss, GradCheckReport, Layer, LayerSpec, Matrix, Mode, Network, Param,
    Parameterized,
};
use knowman::trainer::{
    build_model, compute_objectives, Architecture, Batch, GradRequest, KnowManModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const PROBES: usize = 100;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Eval-mode forward pass written with plain scalar loops over the layer
/// parameters, sharing no code with the network kernels.
pub fn scalar_forward(net: &Network, x: &Matrix) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..x.rows).map(|i| x.row(i).to_vec()).collect();
    for layer in net.layers() {
        rows = rows
            .into_iter()
            .map(|h| match layer {
                Layer::Dense {
                    in_dim,
                    out_dim,
                    weight,
                    bias,
                } => (0..*out_dim)
                    .map(|j| {
                        let mut s = bias.value[j];
                        for k in 0..*in_dim {
                            s += h[k] * weight.value[k * out_dim + j];
                        }
                        s
                    })
                    .collect(),
                Layer::Relu => h.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                Layer::Dropout { .. } => h,
                Layer::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => h
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        gamma.value[j] * (v - running_mean[j]) / (running_var[j] + 1e-5).sqrt()
                            + beta.value[j]
                    })
                    .collect(),
                Layer::LogSoftmax => {
                    let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = h.iter().map(|v| (v - m).exp()).sum();
                    h.iter().map(|v| v - m - z.ln()).collect()
                }
            })
            .collect();
    }
    rows
}

/// Scrambles batchnorm affine parameters and running statistics so the
/// eval path is not an identity.
pub fn perturb_batchnorm(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        if let Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            ..
        } = layer
        {
            gamma.value.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            beta.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            running_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.3..0.3));
            running_var.iter_mut().for_each(|v| *v = rng.random_range(0.2..2.0));
        }
    }
}

/// Sum of `weights * output`, a generic scalar readout for layers that do
/// not end in log-probabilities.
fn readout(out: &Matrix, weights: &Matrix) -> (f64, Matrix) {
    let value = out.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum();
    (value, weights.clone())
}

/// Gradient check of a single network under a fixed frozen mode. Networks
/// ending in log-softmax are scored with NLL, others with a random linear
/// readout.
pub fn check_network(mut net: Network, batch: usize, seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let x = random_matrix(batch, net.input_dim(), &mut r);
    let out_dim = net.output_dim();
    let targets: Vec<usize> = (0..batch).map(|_| r.random_range(0..out_dim)).collect();
    let weights = random_matrix(batch, out_dim, &mut r);
    let ends_in_softmax = matches!(net.layers().last(), Some(Layer::LogSoftmax));
    let mode = Mode::Frozen { seed: seed ^ 0x5eed };
    finite_diff_check(
        &mut net,
        |net: &mut Network, with_grad| {
            let (out, cache) = net.forward_frozen(&x, mode)?;
            let (loss, grad) = if ends_in_softmax {
                nll_loss(&out, &targets)?
            } else {
                readout(&out, &weights)
            };
            if with_grad {
                net.backward(&cache, &grad, false)?;
            }
            Ok(loss)
        },
        PROBES,
        FD_STEP,
        seed,
    )
    .unwrap()
}

/// One small network per layer kind, each preceded by a dense layer so
/// there are parameters upstream of the kind under test.
pub fn layer_kind_networks() -> Vec<(&'static str, Vec<LayerSpec>)> {
    let d = |i, o| LayerSpec::Dense { in_dim: i, out_dim: o };
    vec![
        ("dense", vec![d(6, 5)]),
        ("relu", vec![d(6, 5), LayerSpec::Relu, d(5, 3)]),
        ("dropout", vec![d(6, 5), LayerSpec::Dropout { p: 0.3 }, d(5, 3)]),
        ("batchnorm", vec![d(6, 5), LayerSpec::BatchNorm { dim: 5 }, d(5, 3)]),
        ("log_softmax", vec![d(6, 4), LayerSpec::LogSoftmax]),
    ]
}

pub fn layer_kind_reports() -> Vec<(&'static str, GradCheckReport)> {
    layer_kind_networks()
        .into_iter()
        .enumerate()
        .map(|(i, (name, specs))| {
            let mut net = Network::new(6, &specs, 100 + i as u64).unwrap();
            let mut r = rng(200 + i as u64);
            for p in net.params_mut() {
                p.value.iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
            }
            perturb_batchnorm(&mut net, &mut r);
            (name, check_network(net, 8, 300 + i as u64))
        })
        .collect()
}

pub fn toy_model(input_dim: usize, n_lfs: usize, layers: usize, seed: u64) -> KnowManModel {
    let arch = Architecture {
        f_layers: layers,
        c_layers: layers,
        d_layers: Some(layers),
    };
    let mut m = build_model(input_dim, 2, n_lfs, arch, 7, 0.2, seed).unwrap();
    let mut r = rng(seed ^ 77);
    // Zero biases put relu inputs exactly on the kink for rows whose
    // upstream activations are all zero; jitter to a generic point.
    for p in m.params_mut() {
        p.value.iter_mut().for_each(|v| *v += r.random_range(-0.1..0.1));
    }
    perturb_batchnorm(&mut m.clf, &mut r);
    if let Some(d) = &mut m.disc {
        perturb_batchnorm(d, &mut r);
    }
    m
}

/// Random dense batch with class and LF targets.
pub fn random_batch(rows: usize, input_dim: usize, n_lfs: usize, rng: &mut ChaCha8Rng) -> Batch {
    Batch {
        x: random_matrix(rows, input_dim, rng),
        labels: (0..rows).map(|_| rng.random_range(0..2)).collect(),
        lfs: (0..rows).map(|_| rng.random_range(0..n_lfs)).collect(),
    }
}

/// Exposes a chosen subset of a model's parameter groups to the checker.
pub struct Subset {
    pub model: KnowManModel,
    pub main: bool,
}

impl Parameterized for Subset {
    fn params(&self) -> Vec<&Param> {
        if self.main {
            let mut v = self.model.fs.params();
            v.extend(self.model.clf.params());
            v
        } else {
            self.model.disc.as_ref().unwrap().params()
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        if self.main {
            let mut v = self.model.fs.params_mut();
            v.extend(self.model.clf.params_mut());
            v
        } else {
            self.model.disc.as_mut().unwrap().params_mut()
        }
    }
}

/// Gradient checks on the full extractor/classifier/discriminator stack:
/// `J_Fs` over extractor and classifier parameters (the reversed
/// discriminator gradient flows through D into F_s), and `J_D` over the
/// discriminator parameters.
pub fn composite_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let (input, n_lfs, lambda) = (9, 4, 1.7);
    let mut r = rng(seed);
    let batch = random_batch(10, input, n_lfs, &mut r);
    let model = toy_model(input, n_lfs, 2, seed);
    let mut main = Subset {
        model: model.clone(),
        main: true,
    };
    let main_report = finite_diff_check(
        &mut main,
        |s: &mut Subset, with_grad| {
            let req = if with_grad { GradRequest::Shared } else { GradRequest::None };
            Ok(compute_objectives(&mut s.model, &batch, lambda, req, seed)?.j_fs)
        },
        PROBES,
        FD_STEP,
        seed,
    )
    .unwrap();
    let mut disc = Subset { model, main: false };
    let disc_report = finite_diff_check(
        &mut disc,
        |s: &mut Subset, with_grad| {
            let req = if with_grad {
                GradRequest::DiscriminatorHead
            } else {
                GradRequest::None
            };
            Ok(compute_objectives(&mut s.model, &batch, lambda, req, seed)?.j_d)
        },
        PROBES,
        FD_STEP,
        seed + 1,
    )
    .unwrap();
    vec![("composite J_Fs", main_report), ("composite J_D", disc_report)]
}

fn flat_grads(params: Vec<&Param>) -> Vec<f64> {
    params.iter().flat_map(|p| p.grad.iter().copied()).collect()
}

/// Largest entrywise gap between the extractor gradient of `J_Fs` and
/// `grad J_C - lambda * grad J_D` from two separate backward passes.
pub fn reversal_gap(model: &KnowManModel, batch: &Batch, lambda: f64, seed: u64) -> f64 {
    let grads = |req| {
        let mut m = model.clone();
        m.zero_grads();
        compute_objectives(&mut m, batch, lambda, req, seed).unwrap();
        flat_grads(m.fs.params())
    };
    let shared = grads(GradRequest::Shared);
    let c = grads(GradRequest::Classifier);
    let d = grads(GradRequest::Discriminator);
    shared
        .iter()
        .zip(c.iter().zip(&d))
        .map(|(s, (c, d))| (s - (c - lambda * d)).abs())
        .fold(0.0, f64::max)
}

/// Features where class 0 rows activate the first half of the columns and
/// class 1 rows the second half; LF id is `class * lfs_per_class + k`.
pub fn separable_task(
    n: usize,
    dim: usize,
    lfs_per_class: usize,
    seed: u64,
) -> (FeatureMatrix, Vec<Triple>, Vec<usize>) {
    let mut r = rng(seed);
    let half = dim / 2;
    let mut rows = Vec::new();
    let mut triples = Vec::new();
    let mut golds = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let lf = r.random_range(0..lfs_per_class);
        let base = class * half;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..half {
            if r.random_bool(0.6) {
                row.push((base + j, r.random_range(0.5..1.0)));
            }
        }
        if row.is_empty() {
            row.push((base, 1.0));
        }
        // The LF leaves a mark on a column of its class block.
        row.retain(|e| e.0 != base + lf);
        row.push((base + lf, 1.0));
        row.sort_by_key(|e| e.0);
        let norm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        row.iter_mut().for_each(|e| e.1 /= norm);
        rows.push(row);
        triples.push(Triple {
            instance: i,
            label: class,
            lf: class * lfs_per_class + lf,
        });
        golds.push(class);
    }
    let features = FeatureMatrix {
        dim,
        rows,
        n_zero_rows: 0,
    };
    (features, triples, golds)
}

/// Exact two-sided p-value from all `2^n` swap patterns, counting the
/// patterns whose metric difference is at least as extreme as observed.
pub fn exact_randomization_p(
    a: &[usize],
    b: &[usize],
    golds: &[usize],
    metric: &dyn knowman::eval::Metric,
) -> f64 {
    let n = golds.len();
    let observed = (metric.compute(a, golds) - metric.compute(b, golds)).abs();
    let mut extreme = 0usize;
    for mask in 0u32..(1 << n) {
        let (mut x, mut y) = (a.to_vec(), b.to_vec());
        for i in 0..n {
            if mask >> i & 1 == 1 {
                std::mem::swap(&mut x[i], &mut y[i]);
            }
        }
        let d = metric.compute(&x, golds) - metric.compute(&y, golds);
        if d.abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Two systems over eight items where A is right on six and B on three.
pub fn n8_case() -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let golds = vec![1, 0, 1, 1, 0, 0, 1, 0];
    let a = vec![1, 0, 1, 1, 0, 1, 0, 0];
    let b = vec![0, 1, 1, 0, 0, 1, 1, 1];
    (a, b, golds)
}
