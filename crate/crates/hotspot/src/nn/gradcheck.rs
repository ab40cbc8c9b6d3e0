//! Central finite-difference verification of the analytic gradients.
//!
//! Each check builds a tiny model containing the layer under test, runs
//! the full loss, and compares every sampled parameter (and input)
//! gradient against a central difference with per-parameter step
//! max(1e-5, 1e-3 * |w|). Exposed publicly so the acceptance suite can
//! re-run it.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{backward, forward_cached, weighted_ce, ArchSpec, LayerSpec, Model};
use crate::seed::child_seed;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Random instances (model + batch) evaluated.
    pub instances: usize,
    /// Individual derivatives compared.
    pub comparisons: usize,
    pub max_rel_err: f64,
}

/// Tiny architectures, one per layer type under test.
pub fn probe_archs() -> Vec<(&'static str, ArchSpec)> {
    use LayerSpec::*;
    vec![
        (
            "conv",
            ArchSpec {
                name: "probe-conv".into(),
                input: (2, 3, 3),
                layers: vec![Conv { out_channels: 2 }, Flatten, DenseSoftmax { out: 2 }],
            },
        ),
        (
            "pool",
            ArchSpec {
                name: "probe-pool".into(),
                input: (2, 4, 4),
                layers: vec![
                    Conv { out_channels: 2 },
                    Pool,
                    Flatten,
                    DenseSoftmax { out: 2 },
                ],
            },
        ),
        (
            "dense",
            ArchSpec {
                name: "probe-dense".into(),
                input: (3, 2, 2),
                layers: vec![Flatten, DenseRelu { out: 5 }, DenseSoftmax { out: 2 }],
            },
        ),
        (
            "softmax",
            ArchSpec {
                name: "probe-softmax".into(),
                input: (2, 2, 2),
                layers: vec![Flatten, DenseSoftmax { out: 2 }],
            },
        ),
    ]
}

fn loss_of(model: &Model, x: &Array4<f64>, labels: &[u8], w: f64) -> f64 {
    let (logits, _) = forward_cached(model, x);
    weighted_ce(&logits, labels, w).0
}

/// Runs `instances` random instances of one probe architecture; every
/// parameter and every input element is compared. ReLU kinks within the
/// difference stencil are detected via forward/backward disagreement and
/// skipped (the analytic subgradient is still valid there, the numeric
/// estimate is not).
pub fn check_arch(arch: &ArchSpec, instances: usize, seed: u64) -> GradCheckReport {
    let class_weight = 3.0;
    let mut comparisons = 0usize;
    let mut max_rel: f64 = 0.0;
    for inst in 0..instances {
        let s = child_seed(seed, "gradcheck-instance", inst as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut model = Model::new(arch.clone(), child_seed(s, "model", 0));
        let (c, h, w) = arch.input;
        let n = 2usize;
        let x = Array4::from_shape_fn((n, c, h, w), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let (logits, caches) = forward_cached(&model, &x);
        let (loss0, dlogits) = weighted_ce(&logits, &labels, class_weight);
        let (grads, dx) = backward(&model, &x, &caches, &dlogits);

        // Parameter gradients.
        let n_tensors = grads.tensors.len();
        for t in 0..n_tensors {
            for i in 0..grads.tensors[t].len() {
                let analytic = grads.tensors[t][i];
                let orig = model.param_slices_mut()[t][i];
                let step = 1e-5f64.max(1e-3 * orig.abs());
                model.param_slices_mut()[t][i] = orig + step;
                let lp = loss_of(&model, &x, &labels, class_weight);
                model.param_slices_mut()[t][i] = orig - step;
                let lm = loss_of(&model, &x, &labels, class_weight);
                model.param_slices_mut()[t][i] = orig;
                if let Some(rel) = compare(analytic, lp, lm, loss0, step) {
                    comparisons += 1;
                    max_rel = max_rel.max(rel);
                }
            }
        }

        // Input gradients (exercise the dx path of every layer).
        let mut xm = x.clone();
        let dims = xm.dim();
        for flat in 0..dims.0 * dims.1 * dims.2 * dims.3 {
            let idx = (
                flat / (dims.1 * dims.2 * dims.3),
                flat / (dims.2 * dims.3) % dims.1,
                flat / dims.3 % dims.2,
                flat % dims.3,
            );
            let analytic = dx[idx];
            let orig = xm[idx];
            let step = 1e-5f64.max(1e-3 * orig.abs());
            xm[idx] = orig + step;
            let lp = loss_of(&model, &xm, &labels, class_weight);
            xm[idx] = orig - step;
            let lm = loss_of(&model, &xm, &labels, class_weight);
            xm[idx] = orig;
            if let Some(rel) = compare(analytic, lp, lm, loss0, step) {
                comparisons += 1;
                max_rel = max_rel.max(rel);
            }
        }
    }
    GradCheckReport {
        instances,
        comparisons,
        max_rel_err: max_rel,
    }
}

/// Central-difference comparison; returns None when a kink sits inside
/// the stencil (one-sided estimates disagree) or both values vanish.
fn compare(analytic: f64, lp: f64, lm: f64, l0: f64, step: f64) -> Option<f64> {
    let central = (lp - lm) / (2.0 * step);
    let fwd = (lp - l0) / step;
    let bwd = (l0 - lm) / step;
    if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs() + 1e-3) {
        return None;
    }
    let denom = analytic.abs().max(central.abs());
    if denom < 1e-8 {
        return Some(0.0);
    }
    Some((analytic - central).abs() / denom)
}
