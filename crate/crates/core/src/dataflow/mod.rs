//! Series ingestion and sample construction: synthetic generation, CSV
//! loading with gap policy, train-portion z-score normalization, calendar
//! feature extraction, and sliding-window train/val/test splits.

pub mod calendar;
pub mod csvio;
pub mod synthetic;
pub mod windows;

use chrono::NaiveDateTime;

use crate::error::{FcError, Result};

pub use calendar::{calendar_features, CalendarFeatures};
pub use csvio::{load_csv, save_csv, LoadedSeries};
pub use synthetic::{generate_synthetic, generate_synthetic_parts, SyntheticConfig};
pub use windows::{make_windows, SplitOptions, WindowSample, WindowSplits};

/// Interval length of the fixed 30-minute grid.
pub const STEP_MINUTES: i64 = 30;

/// Affine normalization parameters fitted on a training portion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Norm {
    pub mean: f64,
    pub std: f64,
}

impl Norm {
    /// Maps an original-space value into normalized space.
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    /// Maps a normalized-space value back to the original space.
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// A univariate series of per-interval counts on the 30-minute grid.
///
/// `norm` is set once the series has been z-scored; values are then in
/// normalized space and `norm` holds the affine map back to counts.
#[derive(Debug, Clone)]
pub struct FlowSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
    pub norm: Option<Norm>,
}

impl FlowSeries {
    /// Builds a series and checks its structural invariants: equal lengths,
    /// strictly increasing timestamps with uniform 30-minute spacing, and
    /// non-negative values (pre-normalization).
    pub fn new(timestamps: Vec<NaiveDateTime>, values: Vec<f64>) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(FcError::Shape(format!(
                "series has {} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        for pair in timestamps.windows(2) {
            let delta = pair[1] - pair[0];
            if delta != chrono::Duration::minutes(STEP_MINUTES) {
                return Err(FcError::Data(format!(
                    "timestamps must advance by exactly {STEP_MINUTES} minutes; {} -> {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(FcError::Data(format!(
                "series values must be finite and non-negative, found {v}"
            )));
        }
        Ok(FlowSeries {
            timestamps,
            values,
            norm: None,
        })
    }

    /// Number of intervals.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// True when the series holds no intervals.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Z-scores a series with statistics fitted on its leading `train_fraction`.
///
/// The mean and population standard deviation are computed over the first
/// `⌊len·train_fraction⌋` values only, then applied to the whole series; the
/// fitted parameters are recorded in `norm` so the map can be inverted
/// exactly. A (near-)constant training portion is a degenerate-data error.
pub fn zscore_fit_apply(series: &FlowSeries, train_fraction: f64) -> Result<FlowSeries> {
    if !(0.0..=1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(FcError::Config(format!(
            "train_fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    if series.norm.is_some() {
        return Err(FcError::Data("series is already normalized".into()));
    }
    let n_fit = ((series.len() as f64) * train_fraction).floor() as usize;
    if n_fit == 0 {
        return Err(FcError::Data(
            "training portion is empty; cannot fit normalization".into(),
        ));
    }
    let fit = &series.values[..n_fit];
    let mean = fit.iter().sum::<f64>() / n_fit as f64;
    let var = fit.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_fit as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(FcError::Data(
            "training portion has zero variance; z-score normalization is undefined".into(),
        ));
    }
    let norm = Norm { mean, std };
    Ok(FlowSeries {
        timestamps: series.timestamps.clone(),
        values: series.values.iter().map(|v| norm.apply(*v)).collect(),
        norm: Some(norm),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    pub(crate) fn grid(start_hour: u32, n: usize) -> Vec<NaiveDateTime> {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(start_hour, 0, 0)
            .unwrap();
        (0..n)
            .map(|i| start + chrono::Duration::minutes(STEP_MINUTES * i as i64))
            .collect()
    }

    #[test]
    fn zscore_matches_hand_population_std() {
        let s = FlowSeries::new(grid(0, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let z = zscore_fit_apply(&s, 1.0).unwrap();
        let norm = z.norm.unwrap();
        assert!((norm.mean - 2.0).abs() < 1e-12);
        assert!((norm.std - 0.816_496_580_927_726).abs() < 1e-12);
        assert!((z.values[0] + 1.224_744_871_391_589).abs() < 1e-9);
        assert!(z.values[1].abs() < 1e-12);
        assert!((z.values[2] - 1.224_744_871_391_589).abs() < 1e-9);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = FlowSeries::new(grid(0, 4), vec![5.0; 4]).unwrap();
        let err = zscore_fit_apply(&s, 1.0).unwrap_err();
        assert!(matches!(err, FcError::Data(_)));
    }

    #[test]
    fn zscore_round_trip_is_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..500.0)).collect();
        let s = FlowSeries::new(grid(0, 50), vals.clone()).unwrap();
        let z = zscore_fit_apply(&s, 0.7).unwrap();
        let norm = z.norm.unwrap();
        for (orig, zv) in vals.iter().zip(&z.values) {
            assert!((norm.invert(*zv) - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn non_uniform_spacing_is_rejected() {
        let mut ts = grid(0, 3);
        ts[2] += chrono::Duration::minutes(30);
        assert!(FlowSeries::new(ts, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn negative_values_are_rejected() {
        assert!(FlowSeries::new(grid(0, 2), vec![1.0, -0.5]).is_err());
    }
}
