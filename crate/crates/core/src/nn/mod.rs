//! A small differentiable network kernel in double precision.
//!
//! Supports the fixed layer set dense, ReLU, inverted dropout, batch
//! normalization and log-softmax, with hand-written backward passes,
//! negative log-likelihood loss, Adam/AdamW, and a finite-difference
//! gradient checker.

mod gradcheck;
mod matrix;
mod network;
mod optim;

pub use gradcheck::{finite_diff_check, GradCheckReport, FD_ABS_FALLBACK};
pub use matrix::Matrix;
pub use network::{
    init_network, nll_loss, Cache, Layer, LayerSpec, Mode, Network, Param, Parameterized,
    BN_EPS, BN_MOMENTUM,
};
pub use optim::{
    optimizer_registry, step_params, Adam, AdamW, Optimizer, OptimizerConfig, OptimizerFactory,
};
