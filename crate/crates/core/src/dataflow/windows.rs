//! Sliding-window sample construction and chronological train/val/test
//! splitting.

use crate::dataflow::{calendar_features, CalendarFeatures, FlowSeries};
use crate::error::{FcError, Result};

/// One supervised sample: `m` history values ending just before the anchor,
/// `n` target values starting at the anchor, plus per-history-step calendar
/// features. History and target are contiguous in the source series.
#[derive(Debug, Clone)]
pub struct WindowSample {
    /// Index of the first target step in the source series.
    pub anchor: usize,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    pub history_calendar: Vec<CalendarFeatures>,
}

impl WindowSample {
    /// Inclusive index range of this sample's input (history) steps.
    pub fn input_span(&self) -> (usize, usize) {
        (self.anchor - self.history.len(), self.anchor - 1)
    }

    /// Inclusive index range of this sample's target steps.
    pub fn target_span(&self) -> (usize, usize) {
        (self.anchor, self.anchor + self.target.len() - 1)
    }
}

/// Split fractions and the optional leakage embargo.
#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    /// (train, val, test) fractions; must be non-negative and sum to 1.
    pub fractions: (f64, f64, f64),
    /// When set, drops the leading samples of val (and test) whose history
    /// overlaps the previous split's target windows, so that every earlier
    /// split's target timestamps strictly precede every later split's input
    /// timestamps. Off by default: dense stride-1 windows at the stated
    /// fractions necessarily share timestamps across the boundary, and the
    /// canonical split sizes are defined on the dense assignment.
    pub embargo: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            fractions: (0.7, 0.1, 0.2),
            embargo: false,
        }
    }
}

/// The three chronological sample lists plus embargo bookkeeping.
#[derive(Debug)]
pub struct WindowSplits {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    /// Samples removed from (val, test) by the embargo, if enabled.
    pub embargo_dropped: (usize, usize),
}

/// Cuts stride-1 windows of `m` history and `n` target steps and splits them
/// chronologically by anchor.
///
/// Split sizes follow floor-then-remainder-to-test on the dense sample
/// count: `n_train = ⌊N·f_train⌋`, `n_val = ⌊N·f_val⌋`, the rest to test.
pub fn make_windows(
    series: &FlowSeries,
    m: usize,
    n: usize,
    opts: SplitOptions,
) -> Result<WindowSplits> {
    if m == 0 || n == 0 {
        return Err(FcError::Config(format!(
            "history length m={m} and horizon n={n} must both be positive"
        )));
    }
    let len = series.len();
    if m + n > len {
        return Err(FcError::Data(format!(
            "series has {len} steps but m+n = {} are required for one sample",
            m + n
        )));
    }
    let (f_train, f_val, f_test) = opts.fractions;
    if [f_train, f_val, f_test].iter().any(|f| *f < 0.0) || (f_train + f_val + f_test - 1.0).abs() > 1e-9
    {
        return Err(FcError::Config(format!(
            "split fractions must be non-negative and sum to 1, got ({f_train}, {f_val}, {f_test})"
        )));
    }

    let total = len - m - n + 1;
    let n_train = ((total as f64) * f_train).floor() as usize;
    let n_val = ((total as f64) * f_val).floor() as usize;

    let sample_at = |t: usize| WindowSample {
        anchor: t,
        history: series.values[t - m..t].to_vec(),
        target: series.values[t..t + n].to_vec(),
        history_calendar: series.timestamps[t - m..t]
            .iter()
            .map(|ts| calendar_features(*ts))
            .collect(),
    };

    let anchors: Vec<usize> = (m..m + total).collect();
    let train: Vec<WindowSample> = anchors[..n_train].iter().map(|t| sample_at(*t)).collect();
    let mut val: Vec<WindowSample> =
        anchors[n_train..n_train + n_val].iter().map(|t| sample_at(*t)).collect();
    let mut test: Vec<WindowSample> =
        anchors[n_train + n_val..].iter().map(|t| sample_at(*t)).collect();

    let mut dropped = (0usize, 0usize);
    if opts.embargo {
        // A later-split sample is admissible once its first history index
        // lies strictly after the previous split's last target index.
        let last_target = |samples: &[WindowSample]| samples.last().map(|s| s.target_span().1);
        if let Some(cut) = last_target(&train) {
            let before = val.len();
            val.retain(|s| s.input_span().0 > cut);
            dropped.0 = before - val.len();
        }
        let prev_cut = last_target(&val).or_else(|| last_target(&train));
        if let Some(cut) = prev_cut {
            let before = test.len();
            test.retain(|s| s.input_span().0 > cut);
            dropped.1 = before - test.len();
        }
    }

    Ok(WindowSplits {
        train,
        val,
        test,
        embargo_dropped: dropped,
    })
}
