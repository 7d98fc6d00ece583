//! Learnable window-mask partitioning: per-window instance normalization,
//! parameterized raised-cosine soft masks, threshold binarization with a
//! straight-through gradient contract, and patch diagnostics.
//!
//! The differentiable versions of these operations live in the computation
//! graph ([`crate::numerics::GradGraph`]); this module holds the standalone
//! evaluations used to build masks, plus run bookkeeping and exports.

use crate::error::{FcError, Result};
use crate::numerics::NORM_EPS;

/// One mask scale: period control, phase shift, and the shared binarization
/// threshold. `omega` is kept positive by the model via an exponential
/// reparameterization; this struct receives the already-positive value.
#[derive(Debug, Clone, Copy)]
pub struct DeformableScale {
    pub omega: f64,
    pub phi: f64,
    pub threshold_b: f64,
    pub scale_index: usize,
}

impl DeformableScale {
    pub fn new(omega: f64, phi: f64, threshold_b: f64, scale_index: usize) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(FcError::Config(format!(
                "mask scale {scale_index}: omega must be positive, got {omega}"
            )));
        }
        if !(threshold_b > 0.0 && threshold_b < 1.0) {
            return Err(FcError::Config(format!(
                "mask threshold must lie in (0, 1), got {threshold_b}"
            )));
        }
        Ok(DeformableScale {
            omega,
            phi,
            threshold_b,
            scale_index,
        })
    }
}

/// A binarized mask: the soft activations it came from, the 0/1 selection,
/// and the maximal runs of selected positions (the "patches").
#[derive(Debug, Clone)]
pub struct PatchMask {
    pub soft: Vec<f64>,
    /// 0.0 or 1.0 per position; 1 exactly where `soft > threshold`.
    pub hard: Vec<f64>,
    /// `(offset, length)` of each maximal run of 1s, sorted by offset.
    pub runs: Vec<(usize, usize)>,
}

/// Patch shape summary for one scale, as reported by the analysis command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSummary {
    pub lengths: Vec<usize>,
    pub count: usize,
    pub offsets: Vec<usize>,
}

/// Normalizes a window to zero mean and unit population std, guarding the
/// divisor at 1e-8 so constant windows map to zeros. Returns the guarded
/// (mean, std) pair for exact inversion of non-degenerate windows.
pub fn instance_norm(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(NORM_EPS);
    (x.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

/// Soft mask values: `σ(0.54 − 0.46·cos(2πt/(ω·(L−1)) + φ))` for t = 0..L−1.
///
/// The raised-cosine argument keeps the pre-sigmoid value in [0.08, 1.0], so
/// every entry lies in [σ(0.08), σ(1.0)] ≈ [0.5200, 0.7311] regardless of
/// the parameters.
pub fn window_soft(scale: &DeformableScale, len: usize) -> Vec<f64> {
    assert!(len >= 2, "soft mask needs at least 2 positions, got {len}");
    let denom = scale.omega * (len as f64 - 1.0);
    (0..len)
        .map(|t| {
            let theta = 2.0 * std::f64::consts::PI * t as f64 / denom + scale.phi;
            let raw = 0.54 - 0.46 * theta.cos();
            1.0 / (1.0 + (-raw).exp())
        })
        .collect()
}

/// Maximal runs of 1s in a 0/1 vector.
fn runs_of(hard: &[f64]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for (t, h) in hard.iter().enumerate() {
        match (start, *h > 0.5) {
            (None, true) => start = Some(t),
            (Some(s), false) => {
                runs.push((s, t - s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, hard.len() - s));
    }
    runs
}

/// Thresholds a soft mask into a hard 0/1 selection with run bookkeeping.
///
/// Gradient contract (used by the graph's mask node): the backward pass
/// treats the binarization as the identity, routing gradients to the soft
/// mask as if the selection were the soft values themselves.
pub fn binarize(soft: Vec<f64>, threshold_b: f64) -> PatchMask {
    let hard: Vec<f64> = soft
        .iter()
        .map(|s| if *s > threshold_b { 1.0 } else { 0.0 })
        .collect();
    let runs = runs_of(&hard);
    PatchMask { soft, hard, runs }
}

/// Elementwise product with the hard mask: selected positions pass through
/// bit-identically, unselected positions become exactly zero.
pub fn apply_mask(x: &[f64], mask: &PatchMask) -> Vec<f64> {
    assert_eq!(x.len(), mask.hard.len(), "mask length mismatch");
    x.iter()
        .zip(&mask.hard)
        .map(|(v, h)| if *h > 0.5 { *v } else { 0.0 })
        .collect()
}

/// Run-shape diagnostics of a mask.
pub fn describe_patches(mask: &PatchMask) -> PatchSummary {
    PatchSummary {
        lengths: mask.runs.iter().map(|(_, l)| *l).collect(),
        count: mask.runs.len(),
        offsets: mask.runs.iter().map(|(o, _)| *o).collect(),
    }
}

/// Renders per-scale run tables as `scale,offset,length` CSV.
pub fn coverage_csv(masks: &[PatchMask]) -> String {
    let mut out = String::from("scale,offset,length\n");
    for (scale, mask) in masks.iter().enumerate() {
        for (offset, length) in &mask.runs {
            out.push_str(&format!("{scale},{offset},{length}\n"));
        }
    }
    out
}
