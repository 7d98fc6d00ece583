//! Forecast quality metrics, baseline comparisons, ablation-variant
//! construction, dominant-period analysis, and patch-coverage export.
//!
//! Metrics are always computed in original units (counts); the training
//! module hands over inverse-normalized predictions for exactly this reason.

use std::path::Path;

use crate::deformable::coverage_csv;
use crate::error::{io_err, FcError, Result};
use crate::model::{ModelDims, ModelState, Variant};
use crate::numerics::{amplitude, dft_real};

/// Targets with |y| at or below this are excluded from MAPE (and counted).
pub const MAPE_EPS: f64 = 1e-6;

/// Forecast lengths (in 30-minute steps) at which reports are produced:
/// 1 h, 3 h, 6 h, 9 h and 12 h ahead.
pub const HORIZON_ANCHORS: [usize; 5] = [2, 6, 12, 18, 24];

/// Error summary of a set of forecasts at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    /// `None` when every target was below the MAPE guard.
    pub mape_percent: Option<f64>,
    /// Steps per forecast window that entered the report.
    pub horizon_steps: usize,
    /// Number of forecast windows aggregated.
    pub sample_count: usize,
    /// (prediction, target) pairs excluded from MAPE by the |y| guard.
    pub excluded_mape: usize,
}

fn accumulate(
    pred: &[f64],
    truth: &[f64],
    sq: &mut f64,
    abs: &mut f64,
    ape: &mut f64,
    included: &mut usize,
) {
    for (p, y) in pred.iter().zip(truth) {
        let d = p - y;
        *sq += d * d;
        *abs += d.abs();
        if y.abs() > MAPE_EPS {
            *ape += (d / y).abs();
            *included += 1;
        }
    }
}

fn finish(
    sq: f64,
    abs: f64,
    ape: f64,
    included: usize,
    pairs: usize,
    horizon_steps: usize,
    sample_count: usize,
) -> MetricReport {
    MetricReport {
        mse: sq / pairs as f64,
        mae: abs / pairs as f64,
        mape_percent: (included > 0).then(|| 100.0 * ape / included as f64),
        horizon_steps,
        sample_count,
        excluded_mape: pairs - included,
    }
}

/// Metrics for a single forecast window.
///
/// MSE = mean (ŷ−y)²; MAE = mean |ŷ−y|; MAPE = 100/a′ · Σ |(ŷ−y)/y| over
/// the a′ targets with |y| > 1e-6.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(FcError::Shape(format!(
            "metrics: prediction has {} steps but truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(FcError::Data("metrics over an empty forecast".into()));
    }
    let (mut sq, mut abs, mut ape, mut inc) = (0.0, 0.0, 0.0, 0usize);
    accumulate(pred, truth, &mut sq, &mut abs, &mut ape, &mut inc);
    Ok(finish(sq, abs, ape, inc, pred.len(), pred.len(), 1))
}

/// Metrics aggregated over many forecast windows, truncated to the first
/// `horizon_steps` of each.
pub fn metrics_over(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
    horizon_steps: usize,
) -> Result<MetricReport> {
    if preds.len() != truths.len() {
        return Err(FcError::Shape(format!(
            "metrics: {} prediction windows but {} truth windows",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() || horizon_steps == 0 {
        return Err(FcError::Data(
            "metrics need at least one window and one step".into(),
        ));
    }
    let (mut sq, mut abs, mut ape, mut inc) = (0.0, 0.0, 0.0, 0usize);
    for (p, y) in preds.iter().zip(truths) {
        if p.len() < horizon_steps || y.len() < horizon_steps {
            return Err(FcError::Shape(format!(
                "metrics: window holds {} steps, fewer than the requested horizon {}",
                p.len().min(y.len()),
                horizon_steps
            )));
        }
        accumulate(
            &p[..horizon_steps],
            &y[..horizon_steps],
            &mut sq,
            &mut abs,
            &mut ape,
            &mut inc,
        );
    }
    let pairs = preds.len() * horizon_steps;
    Ok(finish(sq, abs, ape, inc, pairs, horizon_steps, preds.len()))
}

/// Reports at every anchor horizon that fits in the forecast windows.
pub fn horizon_reports(
    preds: &[Vec<f64>],
    truths: &[Vec<f64>],
) -> Result<Vec<MetricReport>> {
    let width = preds.iter().map(|p| p.len()).min().unwrap_or(0);
    HORIZON_ANCHORS
        .iter()
        .filter(|&&h| h <= width)
        .map(|&h| metrics_over(preds, truths, h))
        .collect()
}

/// Percent error reduction of `err_ours` relative to `err_baseline`.
pub fn improvement(err_baseline: f64, err_ours: f64) -> Result<f64> {
    if !(err_baseline > 0.0) {
        return Err(FcError::Data(format!(
            "improvement is undefined for baseline error {err_baseline} (must be > 0)"
        )));
    }
    Ok((err_baseline - err_ours) / err_baseline * 100.0)
}

/// Constructs a model for an ablation arm: the full model or one of the
/// fixed-patch, linear-map or linear-tail replacements.
pub fn build_variant(variant: Variant, dims: ModelDims, seed: u64) -> Result<ModelState> {
    ModelState::init(dims, variant, seed)
}

/// Seasonal-naive baseline: each forecast step copies the value one period
/// back, cycling through the final period of the history.
pub fn seasonal_naive(history: &[f64], n: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 || n == 0 {
        return Err(FcError::Config(
            "seasonal-naive needs a positive period and horizon".into(),
        ));
    }
    if history.len() < period {
        return Err(FcError::Data(format!(
            "seasonal-naive needs at least one full period ({period} steps) of history, got {}",
            history.len()
        )));
    }
    let tail = &history[history.len() - period..];
    Ok((0..n).map(|i| tail[i % period]).collect())
}

/// Strongest period in the series: the series is mean-subtracted, its
/// spectrum taken, and the length L/k of the largest-amplitude bin k ≥ 1
/// returned (rounded to the nearest whole step).
pub fn dominant_period(values: &[f64]) -> usize {
    assert!(values.len() >= 4, "dominant_period needs at least 4 values");
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let spec = dft_real(&centered).expect("finite input");
    let amps = amplitude(&spec);
    let mut best_k = 1;
    let mut best = f64::NEG_INFINITY;
    for (k, &a) in amps.iter().enumerate().skip(1) {
        if a > best {
            best = a;
            best_k = k;
        }
    }
    (values.len() as f64 / best_k as f64).round() as usize
}

/// Writes the patch-coverage table (`scale,offset,length`) for the model's
/// current masks.
pub fn export_patch_coverage(model: &ModelState, out_path: &Path) -> Result<()> {
    let csv = coverage_csv(&model.current_masks());
    std::fs::write(out_path, csv).map_err(|e| io_err(out_path, e))
}

/// Renders labelled reports as
/// `variant,horizon_steps,mse,mae,mape_percent,sample_count,excluded_mape`.
pub fn metrics_csv(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from(
        "variant,horizon_steps,mse,mae,mape_percent,sample_count,excluded_mape\n",
    );
    for (variant, r) in rows {
        let mape = match r.mape_percent {
            Some(v) => format!("{v:.6}"),
            None => "nan".to_string(),
        };
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{},{},{}\n",
            variant, r.horizon_steps, r.mse, r.mae, mape, r.sample_count, r.excluded_mape
        ));
    }
    out
}
