use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, derived_rng};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// A trainable array with its gradient and Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Dropout { p: f64 },
    BatchNorm { dim: usize },
    LogSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        in_dim: usize,
        out_dim: usize,
        /// `in_dim x out_dim`, row-major.
        weight: Param,
        bias: Param,
    },
    Relu,
    Dropout {
        p: f64,
    },
    BatchNorm {
        dim: usize,
        gamma: Param,
        beta: Param,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    LogSoftmax,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense { in_dim, out_dim, .. } => LayerSpec::Dense {
                in_dim: *in_dim,
                out_dim: *out_dim,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout { p } => LayerSpec::Dropout { p: *p },
            Layer::BatchNorm { dim, .. } => LayerSpec::BatchNorm { dim: *dim },
            Layer::LogSoftmax => LayerSpec::LogSoftmax,
        }
    }
}

/// Forward-pass behaviour.
///
/// * `Train`: dropout active, batch-norm uses batch statistics and updates
///   its running statistics.
/// * `Frozen`: as `Train`, but running statistics are left untouched.
/// * `Eval`: dropout off, batch-norm uses running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Frozen { seed: u64 },
    Eval,
}

impl Mode {
    fn dropout_seed(self) -> Option<u64> {
        match self {
            Mode::Train { seed } | Mode::Frozen { seed } => Some(seed),
            Mode::Eval => None,
        }
    }

    fn batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense { input: Matrix },
    Relu { active: Vec<bool> },
    Dropout { mask: Option<Vec<f64>> },
    BatchNorm {
        xhat: Matrix,
        invstd: Vec<f64>,
        batch_stats: bool,
    },
    LogSoftmax { output: Matrix },
}

/// Activations recorded by a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Cache {
    specs: Vec<LayerSpec>,
    entries: Vec<LayerCache>,
    batch: usize,
}

type PendingStats = Vec<(usize, Vec<f64>, Vec<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
}

/// Builds a network whose input width is taken from its first dense or
/// batch-norm layer.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<Network> {
    let input_dim = specs
        .iter()
        .find_map(|s| match s {
            LayerSpec::Dense { in_dim, .. } => Some(*in_dim),
            LayerSpec::BatchNorm { dim } => Some(*dim),
            _ => None,
        })
        .ok_or_else(|| Error::Shape("cannot infer input width without a dense layer".into()))?;
    Network::new(input_dim, specs, seed)
}

impl Network {
    /// Dense weights are Glorot-uniform, biases zero; batch-norm starts at
    /// scale 1, shift 0, running mean 0 and running variance 1.
    pub fn new(input_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Shape("input width must be positive".into()));
        }
        let mut width = input_dim;
        let mut layers = Vec::with_capacity(specs.len());
        for (li, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if in_dim != width || out_dim == 0 {
                        return Err(Error::Shape(format!(
                            "layer {li}: dense {in_dim}->{out_dim} after width {width}"
                        )));
                    }
                    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
                    let mut rng = derived_rng(seed, "glorot", li as u64);
                    let w = (0..in_dim * out_dim)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    width = out_dim;
                    Layer::Dense {
                        in_dim,
                        out_dim,
                        weight: Param::new(w),
                        bias: Param::new(vec![0.0; out_dim]),
                    }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(Error::Config(format!("layer {li}: dropout p={p} not in [0,1)")));
                    }
                    Layer::Dropout { p }
                }
                LayerSpec::BatchNorm { dim } => {
                    if dim != width {
                        return Err(Error::Shape(format!(
                            "layer {li}: batchnorm over {dim} after width {width}"
                        )));
                    }
                    Layer::BatchNorm {
                        dim,
                        gamma: Param::new(vec![1.0; dim]),
                        beta: Param::new(vec![0.0; dim]),
                        running_mean: vec![0.0; dim],
                        running_var: vec![1.0; dim],
                    }
                }
                LayerSpec::LogSoftmax => Layer::LogSoftmax,
            };
            layers.push(layer);
        }
        Ok(Self {
            input_dim,
            output_dim: width,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Batch-norm running statistics in layer order (mean, then variance).
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => vec![running_mean, running_var],
                _ => vec![],
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => vec![running_mean, running_var],
                _ => vec![],
            })
            .collect()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm { .. }))
    }

    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, Cache)> {
        let (out, cache, pending) = self.forward_impl(x, mode)?;
        if matches!(mode, Mode::Train { .. }) {
            for (li, mean, var) in pending {
                if let Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } = &mut self.layers[li]
                {
                    for j in 0..mean.len() {
                        running_mean[j] = (1.0 - BN_MOMENTUM) * running_mean[j] + BN_MOMENTUM * mean[j];
                        running_var[j] = (1.0 - BN_MOMENTUM) * running_var[j] + BN_MOMENTUM * var[j];
                    }
                }
            }
        }
        Ok((out, cache))
    }

    /// Forward pass without side effects (`Frozen` or `Eval`).
    pub fn forward_frozen(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, Cache)> {
        if matches!(mode, Mode::Train { .. }) {
            return Err(Error::Invalid("forward_frozen cannot run in train mode".into()));
        }
        let (out, cache, _) = self.forward_impl(x, mode)?;
        Ok((out, cache))
    }

    /// Eval-mode output; rows are independent.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_impl(x, Mode::Eval)?.0)
    }

    fn forward_impl(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, Cache, PendingStats)> {
        if x.cols != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols, self.input_dim
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let batch = x.rows;
        let mut h = x.clone();
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut pending = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense {
                    in_dim,
                    out_dim,
                    weight,
                    bias,
                } => {
                    let (in_dim, out_dim) = (*in_dim, *out_dim);
                    let mut y = Matrix::zeros(batch, out_dim);
                    for i in 0..batch {
                        let xrow = h.row(i);
                        let yrow = y.row_mut(i);
                        yrow.copy_from_slice(&bias.value);
                        for k in 0..in_dim {
                            let a = xrow[k];
                            if a == 0.0 {
                                continue;
                            }
                            let wrow = &weight.value[k * out_dim..(k + 1) * out_dim];
                            for (yj, wj) in yrow.iter_mut().zip(wrow) {
                                *yj += a * wj;
                            }
                        }
                    }
                    entries.push(LayerCache::Dense { input: h });
                    h = y;
                }
                Layer::Relu => {
                    let active: Vec<bool> = h.data.iter().map(|&v| v > 0.0).collect();
                    for (v, &a) in h.data.iter_mut().zip(&active) {
                        if !a {
                            *v = 0.0;
                        }
                    }
                    entries.push(LayerCache::Relu { active });
                }
                Layer::Dropout { p } => match mode.dropout_seed() {
                    Some(seed) => {
                        let keep = 1.0 - p;
                        let mut rng = derived_rng(derive_seed(seed, "dropout", li as u64), "mask", 0);
                        let mask: Vec<f64> = (0..h.data.len())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (v, m) in h.data.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        entries.push(LayerCache::Dropout { mask: Some(mask) });
                    }
                    None => entries.push(LayerCache::Dropout { mask: None }),
                },
                Layer::BatchNorm {
                    dim,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    let dim = *dim;
                    let batch_stats = mode.batch_stats();
                    let (mean, invstd) = if batch_stats {
                        if batch < 2 {
                            return Err(Error::Shape(
                                "batch normalization needs at least 2 rows in train mode".into(),
                            ));
                        }
                        let n = batch as f64;
                        let mut mean = vec![0.0; dim];
                        for i in 0..batch {
                            for (m, v) in mean.iter_mut().zip(h.row(i)) {
                                *m += v;
                            }
                        }
                        mean.iter_mut().for_each(|m| *m /= n);
                        let mut var = vec![0.0; dim];
                        for i in 0..batch {
                            for ((s, v), m) in var.iter_mut().zip(h.row(i)).zip(&mean) {
                                *s += (v - m) * (v - m);
                            }
                        }
                        var.iter_mut().for_each(|s| *s /= n);
                        let invstd: Vec<f64> = var.iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
                        let unbiased = var.iter().map(|s| s * n / (n - 1.0)).collect();
                        pending.push((li, mean.clone(), unbiased));
                        (mean, invstd)
                    } else {
                        let invstd = running_var.iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
                        (running_mean.clone(), invstd)
                    };
                    let mut xhat = Matrix::zeros(batch, dim);
                    for i in 0..batch {
                        let src = h.row(i);
                        let dst = xhat.row_mut(i);
                        for j in 0..dim {
                            dst[j] = (src[j] - mean[j]) * invstd[j];
                        }
                    }
                    let mut y = Matrix::zeros(batch, dim);
                    for i in 0..batch {
                        let xr = xhat.row(i);
                        let yr = y.row_mut(i);
                        for j in 0..dim {
                            yr[j] = gamma.value[j] * xr[j] + beta.value[j];
                        }
                    }
                    entries.push(LayerCache::BatchNorm {
                        xhat,
                        invstd,
                        batch_stats,
                    });
                    h = y;
                }
                Layer::LogSoftmax => {
                    for i in 0..batch {
                        let row = h.row_mut(i);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        let lse = max + sum.ln();
                        row.iter_mut().for_each(|v| *v -= lse);
                    }
                    entries.push(LayerCache::LogSoftmax { output: h.clone() });
                }
            }
        }
        let cache = Cache {
            specs: self.specs(),
            entries,
            batch,
        };
        Ok((h, cache, pending))
    }

    /// Accumulates parameter gradients for `grad_out` (gradient of the loss
    /// w.r.t. the network output). Returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &Cache,
        grad_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        if cache.specs != self.specs() {
            return Err(Error::Shape("cache was produced by a different network".into()));
        }
        if grad_out.rows != cache.batch || grad_out.cols != self.output_dim {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                grad_out.rows, grad_out.cols, cache.batch, self.output_dim
            )));
        }
        let batch = cache.batch;
        let mut g = grad_out.clone();
        for (li, (layer, entry)) in self
            .layers
            .iter_mut()
            .zip(&cache.entries)
            .enumerate()
            .rev()
        {
            match (layer, entry) {
                (
                    Layer::Dense {
                        in_dim,
                        out_dim,
                        weight,
                        bias,
                    },
                    LayerCache::Dense { input },
                ) => {
                    let (in_dim, out_dim) = (*in_dim, *out_dim);
                    let mut gw = vec![0.0; in_dim * out_dim];
                    let mut gb = vec![0.0; out_dim];
                    for i in 0..batch {
                        let dy = g.row(i);
                        let xr = input.row(i);
                        for (b, d) in gb.iter_mut().zip(dy) {
                            *b += d;
                        }
                        for k in 0..in_dim {
                            let a = xr[k];
                            if a == 0.0 {
                                continue;
                            }
                            let gwr = &mut gw[k * out_dim..(k + 1) * out_dim];
                            for (w, d) in gwr.iter_mut().zip(dy) {
                                *w += a * d;
                            }
                        }
                    }
                    for (acc, v) in weight.grad.iter_mut().zip(&gw) {
                        *acc += v;
                    }
                    for (acc, v) in bias.grad.iter_mut().zip(&gb) {
                        *acc += v;
                    }
                    if li == 0 && !need_input_grad {
                        return Ok(None);
                    }
                    let mut dx = Matrix::zeros(batch, in_dim);
                    for i in 0..batch {
                        let dy = g.row(i);
                        let dxr = dx.row_mut(i);
                        for k in 0..in_dim {
                            let wrow = &weight.value[k * out_dim..(k + 1) * out_dim];
                            dxr[k] = wrow.iter().zip(dy).map(|(w, d)| w * d).sum();
                        }
                    }
                    g = dx;
                }
                (Layer::Relu, LayerCache::Relu { active }) => {
                    for (v, &a) in g.data.iter_mut().zip(active) {
                        if !a {
                            *v = 0.0;
                        }
                    }
                }
                (Layer::Dropout { .. }, LayerCache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (v, m) in g.data.iter_mut().zip(mask) {
                            *v *= m;
                        }
                    }
                }
                (
                    Layer::BatchNorm {
                        dim, gamma, beta, ..
                    },
                    LayerCache::BatchNorm {
                        xhat,
                        invstd,
                        batch_stats,
                    },
                ) => {
                    let dim = *dim;
                    let mut dgamma = vec![0.0; dim];
                    let mut dbeta = vec![0.0; dim];
                    for i in 0..batch {
                        let dy = g.row(i);
                        let xr = xhat.row(i);
                        for j in 0..dim {
                            dgamma[j] += dy[j] * xr[j];
                            dbeta[j] += dy[j];
                        }
                    }
                    let mut dx = Matrix::zeros(batch, dim);
                    if *batch_stats {
                        let n = batch as f64;
                        let mut sum_dxhat = vec![0.0; dim];
                        let mut sum_dxhat_xhat = vec![0.0; dim];
                        for i in 0..batch {
                            let dy = g.row(i);
                            let xr = xhat.row(i);
                            for j in 0..dim {
                                let dxh = dy[j] * gamma.value[j];
                                sum_dxhat[j] += dxh;
                                sum_dxhat_xhat[j] += dxh * xr[j];
                            }
                        }
                        for i in 0..batch {
                            let dy = g.row(i);
                            let xr = xhat.row(i);
                            let dxr = dx.row_mut(i);
                            for j in 0..dim {
                                let dxh = dy[j] * gamma.value[j];
                                dxr[j] = invstd[j] / n
                                    * (n * dxh - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j]);
                            }
                        }
                    } else {
                        for i in 0..batch {
                            let dy = g.row(i);
                            let dxr = dx.row_mut(i);
                            for j in 0..dim {
                                dxr[j] = dy[j] * gamma.value[j] * invstd[j];
                            }
                        }
                    }
                    for (acc, v) in gamma.grad.iter_mut().zip(&dgamma) {
                        *acc += v;
                    }
                    for (acc, v) in beta.grad.iter_mut().zip(&dbeta) {
                        *acc += v;
                    }
                    g = dx;
                }
                (Layer::LogSoftmax, LayerCache::LogSoftmax { output }) => {
                    for i in 0..batch {
                        let out = output.row(i);
                        let row = g.row_mut(i);
                        let total: f64 = row.iter().sum();
                        for (d, o) in row.iter_mut().zip(out) {
                            *d -= o.exp() * total;
                        }
                    }
                }
                _ => return Err(Error::Shape("cache entry does not match layer".into())),
            }
        }
        Ok(if need_input_grad { Some(g) } else { None })
    }
}

impl Parameterized for Network {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } => vec![weight, bias],
                Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
                _ => vec![],
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias, .. } => vec![weight, bias],
                Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
                _ => vec![],
            })
            .collect()
    }
}

/// Mean negative log-likelihood over rows and its gradient w.r.t. the
/// log-probabilities.
pub fn nll_loss(log_probs: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    if targets.len() != log_probs.rows {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            log_probs.rows
        )));
    }
    if log_probs.rows == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= log_probs.cols) {
        return Err(Error::Invalid(format!(
            "target {t} out of range for {} classes",
            log_probs.cols
        )));
    }
    let b = log_probs.rows as f64;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| log_probs.get(i, t))
        .sum();
    let mut grad = Matrix::zeros(log_probs.rows, log_probs.cols);
    for (i, &t) in targets.iter().enumerate() {
        grad.set(i, t, -1.0 / b);
    }
    Ok((-total / b, grad))
}
