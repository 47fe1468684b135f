//! Classification metrics and the paired approximate randomization test.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::seed::derived_rng;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const DEFAULT_ROUNDS: usize = 10_000;

/// Slack for comparing permuted and observed metric differences, which are
/// sums of the same counts computed in different orders.
const DIFF_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub positive_class: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

fn check_aligned(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("cannot score an empty prediction set".into()));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn score(preds: &[usize], golds: &[usize], positive_class: usize) -> Result<EvalReport> {
    check_aligned(preds, golds)?;
    let (mut tp, mut fp, mut fneg, mut tn, mut correct) = (0, 0, 0, 0, 0);
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            correct += 1;
        }
        match (p == positive_class, g == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EvalReport {
        n: preds.len(),
        positive_class,
        accuracy: ratio(correct, preds.len()),
        precision,
        recall,
        f1,
        true_pos: tp,
        false_pos: fp,
        false_neg: fneg,
        true_neg: tn,
    })
}

/// A scalar quality measure over aligned predictions and gold labels.
pub trait Metric: Send + Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, preds: &[usize], golds: &[usize]) -> f64;
}

pub struct Accuracy;

impl Metric for Accuracy {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn compute(&self, preds: &[usize], golds: &[usize]) -> f64 {
        let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
        ratio(hits, preds.len())
    }
}

/// F1 of a single designated positive class.
pub struct PositiveF1 {
    pub positive_class: usize,
}

impl Metric for PositiveF1 {
    fn name(&self) -> &'static str {
        "f1_pos"
    }

    fn compute(&self, preds: &[usize], golds: &[usize]) -> f64 {
        score(preds, golds, self.positive_class).map_or(0.0, |r| r.f1)
    }
}

pub type MetricFactory = dyn Fn(usize) -> Box<dyn Metric> + Send + Sync;

/// Metrics by name; factories take the positive class id.
pub fn metric_registry() -> Registry<MetricFactory> {
    let mut reg: Registry<MetricFactory> = Registry::new("metric");
    reg.register("accuracy", Arc::new(|_| Box::new(Accuracy)));
    reg.register(
        "f1_pos",
        Arc::new(|positive_class| Box::new(PositiveF1 { positive_class })),
    );
    reg
}

pub fn metric(name: &str, positive_class: usize) -> Result<Box<dyn Metric>> {
    Ok(metric_registry().get(name)?(positive_class))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub metric: String,
    pub score_a: f64,
    pub score_b: f64,
    /// `score_a - score_b`.
    pub observed_diff: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub seed: u64,
    pub significant: bool,
}

/// Metric differences under `rounds` random per-item swaps of the two
/// systems' outputs. Round `r` draws from its own derived generator, so the
/// result does not depend on scheduling.
pub fn null_distribution(
    preds_a: &[usize],
    preds_b: &[usize],
    golds: &[usize],
    metric: &dyn Metric,
    rounds: usize,
    seed: u64,
) -> Vec<f64> {
    (0..rounds)
        .into_par_iter()
        .map(|r| {
            let mut rng = derived_rng(seed, "randomization-round", r as u64);
            let mut a = preds_a.to_vec();
            let mut b = preds_b.to_vec();
            for i in 0..a.len() {
                if rng.random_bool(0.5) {
                    std::mem::swap(&mut a[i], &mut b[i]);
                }
            }
            metric.compute(&a, golds) - metric.compute(&b, golds)
        })
        .collect()
}

/// Add-one smoothed two-sided p-value of `observed` against a null sample.
pub fn randomization_p_value(observed: f64, null: &[f64]) -> f64 {
    let threshold = observed.abs() - DIFF_TOLERANCE;
    let extreme = null.iter().filter(|d| d.abs() >= threshold).count();
    (extreme + 1) as f64 / (null.len() + 1) as f64
}

pub fn approx_randomization_test(
    preds_a: &[usize],
    preds_b: &[usize],
    golds: &[usize],
    metric: &dyn Metric,
    rounds: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    check_aligned(preds_a, golds)?;
    check_aligned(preds_b, golds)?;
    if rounds == 0 {
        return Err(Error::Invalid("need at least one permutation round".into()));
    }
    let score_a = metric.compute(preds_a, golds);
    let score_b = metric.compute(preds_b, golds);
    let observed_diff = score_a - score_b;
    let null = null_distribution(preds_a, preds_b, golds, metric, rounds, seed);
    let p_value = randomization_p_value(observed_diff, &null);
    Ok(SignificanceResult {
        metric: metric.name().to_string(),
        score_a,
        score_b,
        observed_diff,
        p_value,
        n_permutations: rounds,
        seed,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

/// Renders a comparison grid with one row per system.
pub fn format_grid(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>5} | {:>5} {:>5} {:>5}", "system", "Acc", "P", "R", "F1");
    let _ = writeln!(out, "{}", "-".repeat(width + 28));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>5.3} | {:>5.3} {:>5.3} {:>5.3}",
            name, r.accuracy, r.precision, r.recall, r.f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = score(&[0, 1, 1, 0], &[0, 1, 1, 0], 1).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_negative_predictions() {
        let r = score(&[0, 0, 0, 0], &[0, 1, 1, 0], 1).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(score(&[0, 1], &[0], 1).is_err());
        assert!(score(&[], &[], 1).is_err());
    }

    #[test]
    fn printed_precision_recall_do_not_yield_reported_f1() {
        // Harmonic mean of P=0.16, R=0.72 is about 0.26, not the 0.35 printed
        // alongside them; positive-class F1 is computed from P and R as usual.
        let f1: f64 = 2.0 * 0.16 * 0.72 / (0.16 + 0.72);
        assert!((f1 - 0.2618).abs() < 1e-3);
        assert!((f1 - 0.35f64).abs() > 0.05);
    }

    #[test]
    fn identical_systems_have_p_one() {
        let golds = [0, 1, 1, 0, 1];
        let preds = [0, 1, 0, 0, 1];
        let r = approx_randomization_test(&preds, &preds, &golds, &Accuracy, 500, 1).unwrap();
        assert_eq!(r.observed_diff, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn p_value_bounds_and_determinism() {
        let golds = [1; 20];
        let a = [1; 20];
        let b = [0; 20];
        let r = approx_randomization_test(&a, &b, &golds, &Accuracy, 999, 4).unwrap();
        assert!(r.p_value >= 1.0 / 1000.0);
        assert!(r.p_value < 0.01);
        let r2 = approx_randomization_test(&a, &b, &golds, &Accuracy, 999, 4).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn metric_registry_names() {
        assert_eq!(metric_registry().names(), vec!["accuracy", "f1_pos"]);
        assert_eq!(metric("f1_pos", 1).unwrap().name(), "f1_pos");
        assert!(metric("auc", 1).is_err());
    }
}
