use super::forward::{forward_cached, relu_pattern};
use super::train::{batch_loss, loss_and_gradients};
use super::{EdgeBatch, ModelParams, RgcnError};
use crate::graph::GraphView;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared absolutely.
    pub floor: f64,
    /// At most this many weights are probed, spread evenly over all layers.
    pub max_entries: usize,
    /// Use the five-point stencil `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`
    /// instead of `(f(h) - f(-h)) / 2h`.
    pub fourth_order: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_entries: usize::MAX,
            fourth_order: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation flipped a ReLU and were left out.
    pub skipped_kinks: usize,
}

/// Compare analytic gradients with central finite differences.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
    batch: &EdgeBatch,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, RgcnError> {
    let (_, grads) = loss_and_gradients(g, p, batch)?;
    let base_pattern = relu_pattern(&forward_cached(g, p)?);
    let stride = p.parameter_count().div_ceil(cfg.max_entries.max(1)).max(1);
    let d = p.output_dim();
    let eval = |q: &ModelParams| -> Result<(f64, bool), RgcnError> {
        let c = forward_cached(g, q)?;
        let same = relu_pattern(&c) == base_pattern;
        Ok((batch_loss(&c.output, d, batch, false)?.0, same))
    };
    let steps: &[(f64, f64)] = if cfg.fourth_order {
        &[(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)]
    } else {
        &[(-1.0, -1.0), (1.0, 1.0)]
    };
    let denom = if cfg.fourth_order { 12.0 } else { 2.0 } * cfg.eps;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut q = p.clone();
    let mut flat = 0usize;
    for l in 0..p.layers.len() {
        for k in 0..p.layers[l].weights.len() {
            flat += 1;
            if (flat - 1) % stride != 0 {
                continue;
            }
            let w = p.layers[l].weights[k];
            let mut acc = 0.0;
            let mut smooth = true;
            for &(step, coef) in steps {
                q.layers[l].weights[k] = w + step * cfg.eps;
                let (f, same) = eval(&q)?;
                acc += coef * f;
                smooth &= same;
            }
            q.layers[l].weights[k] = w;
            if !smooth {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = acc / denom;
            let analytic = grads.layers[l][k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
