use rand::Rng;

use super::Parameterized;
use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Below this gradient magnitude the checker compares absolute rather than
/// relative error.
pub const FD_ABS_FALLBACK: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub probes: usize,
    /// `(param index, entry, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares analytic gradients against central differences on randomly
/// chosen coordinates.
///
/// `objective(model, with_grad)` must return the loss and, when
/// `with_grad` is set, leave the analytic gradient in the params' `grad`
/// buffers (grads are zeroed beforehand). It must be deterministic.
pub fn finite_diff_check<M, F>(
    model: &mut M,
    mut objective: F,
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grads();
    objective(model, true)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Invalid("model has no parameters".into()));
    }
    let mut rng = rng_from(seed);
    let mut report = GradCheckReport {
        max_error: 0.0,
        probes: n_probes,
        worst: None,
    };
    for _ in 0..n_probes {
        let mut flat = rng.random_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let analytic = model.params()[pi].grad[flat];
        let orig = model.params()[pi].value[flat];
        model.params_mut()[pi].value[flat] = orig + h;
        let plus = objective(model, false)?;
        model.params_mut()[pi].value[flat] = orig - h;
        let minus = objective(model, false)?;
        model.params_mut()[pi].value[flat] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale < FD_ABS_FALLBACK {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / scale
        };
        if err > report.max_error || report.worst.is_none() {
            report.max_error = report.max_error.max(err);
            report.worst = Some((pi, flat, analytic, numeric));
        }
    }
    Ok(report)
}
