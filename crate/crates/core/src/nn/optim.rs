use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Per-parameter update rule. Moment state lives in the `Param`.
pub trait Optimizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn update(&self, param: &mut Param);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn update(&self, p: &mut Param) {
        p.step += 1;
        let t = p.step.min(i32::MAX as u64) as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
            p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            p.value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Adam with decoupled weight decay applied before the Adam delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub adam: Adam,
    pub weight_decay: f64,
}

impl Optimizer for AdamW {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn update(&self, p: &mut Param) {
        let decay = self.adam.lr * self.weight_decay;
        if decay != 0.0 {
            for v in &mut p.value {
                *v -= decay * *v;
            }
        }
        self.adam.update(p);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: "adam".into(),
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn build(&self) -> Result<Box<dyn Optimizer>> {
        Ok(optimizer_registry().get(&self.kind)?(self))
    }
}

pub type OptimizerFactory = dyn Fn(&OptimizerConfig) -> Box<dyn Optimizer> + Send + Sync;

pub fn optimizer_registry() -> Registry<OptimizerFactory> {
    fn adam(c: &OptimizerConfig) -> Adam {
        Adam {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
    let mut reg: Registry<OptimizerFactory> = Registry::new("optimizer");
    reg.register("adam", Arc::new(|c| Box::new(adam(c))));
    reg.register(
        "adamw",
        Arc::new(|c| {
            Box::new(AdamW {
                adam: adam(c),
                weight_decay: c.weight_decay,
            })
        }),
    );
    reg
}

/// Applies one optimizer step to every param; refuses (leaving all params
/// untouched) if any gradient is non-finite.
pub fn step_params(opt: &dyn Optimizer, params: Vec<&mut Param>) -> Result<()> {
    if params.iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numeric(format!(
            "{} step refused: non-finite gradient",
            opt.name()
        )));
    }
    for p in params {
        opt.update(p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Param {
        let mut p = Param::new(values.to_vec());
        p.grad = grads.to_vec();
        p
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let lr = 0.01;
        let g = [0.3, -2.0, 1e-3];
        let mut p = param(&[1.0, 1.0, 1.0], &g);
        Adam::new(lr).update(&mut p);
        for (v, g) in p.value.iter().zip(g) {
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
            assert!((v - (1.0 - lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = param(&[0.5, -0.25], &[0.0, 0.0]);
        for _ in 0..5 {
            Adam::new(0.1).update(&mut p);
        }
        assert_eq!(p.value, vec![0.5, -0.25]);
        let mut q = param(&[0.5, -0.25], &[0.0, 0.0]);
        AdamW {
            adam: Adam::new(0.1),
            weight_decay: 0.0,
        }
        .update(&mut q);
        assert_eq!(q.value, vec![0.5, -0.25]);
    }

    #[test]
    fn adamw_zero_lr_is_noop() {
        let mut p = param(&[0.5, -0.25], &[1.0, -3.0]);
        AdamW {
            adam: Adam::new(0.0),
            weight_decay: 0.7,
        }
        .update(&mut p);
        assert_eq!(p.value, vec![0.5, -0.25]);
    }

    #[test]
    fn adamw_decays_before_delta() {
        let mut p = param(&[2.0], &[0.0]);
        AdamW {
            adam: Adam::new(0.1),
            weight_decay: 0.5,
        }
        .update(&mut p);
        assert!((p.value[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_betas_degenerate_to_sign_sgd() {
        let opt = Adam {
            lr: 0.05,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        };
        // Minimize (x - 3)^2 from x = 0: each step moves by exactly lr.
        let mut p = Param::new(vec![0.0]);
        for k in 1..=10 {
            p.grad[0] = 2.0 * (p.value[0] - 3.0);
            opt.update(&mut p);
            assert!((p.value[0] - 0.05 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_refuses_step() {
        let mut a = param(&[1.0], &[0.5]);
        let mut b = param(&[1.0], &[f64::INFINITY]);
        let opt = Adam::new(0.1);
        assert!(step_params(&opt, vec![&mut a, &mut b]).is_err());
        assert_eq!(a.value, vec![1.0]);
        assert_eq!(a.step, 0);
    }

    #[test]
    fn registry_builds_by_name() {
        let cfg = OptimizerConfig {
            kind: "adamw".into(),
            ..OptimizerConfig::default()
        };
        assert_eq!(cfg.build().unwrap().name(), "adamw");
        let bad = OptimizerConfig {
            kind: "sgd".into(),
            ..OptimizerConfig::default()
        };
        assert!(bad.build().is_err());
    }
}
