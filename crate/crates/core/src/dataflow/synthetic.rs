//! Synthetic flow-series generator: a strictly periodic daily base wave plus
//! piecewise-linear regime trends, sparse positive spikes, and Gaussian
//! noise, clipped at zero.

use chrono::{NaiveDate, NaiveDateTime};
use rand::Rng;

use crate::dataflow::{FlowSeries, STEP_MINUTES};
use crate::error::{FcError, Result};
use crate::rng::stream;

/// Count scale of the periodic base profile.
const BASE_SCALE: f64 = 100.0;
/// Trend level at t = 0 and the band it reflects inside.
const TREND_START: f64 = 120.0;
const TREND_MIN: f64 = 40.0;
const TREND_MAX: f64 = 300.0;
/// Per-step trend slopes are drawn uniformly from ±this bound.
const SLOPE_BOUND: f64 = 0.08;

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    /// Total number of 30-minute steps.
    pub length: usize,
    /// Steps per seasonal cycle (48 = one day).
    pub base_period: usize,
    /// Number of trend regimes; boundaries fall on random period multiples.
    pub regime_count: usize,
    /// Expected spikes per seasonal cycle.
    pub spike_rate: f64,
    /// Spike height as a multiple of the smooth series' std.
    pub spike_magnitude: f64,
    /// Noise std as a fraction of the base wave's amplitude.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            length: 4096,
            base_period: 48,
            regime_count: 3,
            spike_rate: 1.0,
            spike_magnitude: 3.0,
            noise_std: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_period < 2 {
            return Err(FcError::Config(format!(
                "base_period must be at least 2, got {}",
                self.base_period
            )));
        }
        if self.length < 4 * self.base_period {
            return Err(FcError::Config(format!(
                "length {} is below the minimum of 4*base_period = {}",
                self.length,
                4 * self.base_period
            )));
        }
        if self.regime_count == 0 || self.regime_count > self.length / self.base_period {
            return Err(FcError::Config(format!(
                "regime_count must be in 1..={}, got {}",
                self.length / self.base_period,
                self.regime_count
            )));
        }
        for (name, v) in [
            ("spike_rate", self.spike_rate),
            ("spike_magnitude", self.spike_magnitude),
            ("noise_std", self.noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(FcError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Additive components of a generated series, exposed for diagnostics and
/// for verifying the periodicity of `values - trend`.
#[derive(Debug, Clone)]
pub struct SyntheticParts {
    pub base: Vec<f64>,
    pub trend: Vec<f64>,
    pub spikes: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Seasonal profile at phase `r/period` of the cycle, in [~0.07, ~1.74].
/// Asymmetric double-peaked shape: a main peak with a secondary shoulder.
fn profile(r: usize, period: usize) -> f64 {
    let theta = 2.0 * std::f64::consts::PI * (r as f64) / (period as f64);
    1.1 + 0.75 * (theta - std::f64::consts::PI).cos() + 0.3 * (2.0 * theta - 2.6).cos()
}

fn timestamps(length: usize) -> Vec<NaiveDateTime> {
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    (0..length)
        .map(|t| start + chrono::Duration::minutes(STEP_MINUTES * t as i64))
        .collect()
}

/// Generates a synthetic series; see [`generate_synthetic_parts`] for the
/// component breakdown.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FlowSeries> {
    generate_synthetic_parts(cfg).map(|(series, _)| series)
}

/// Generates a synthetic series together with its additive components.
///
/// Construction, deterministic in `cfg.seed` via named substreams:
/// - base: `BASE_SCALE * profile(t mod base_period)` — exactly periodic,
///   since the phase index is reduced before any float math;
/// - trend: a piecewise-linear walk from 120 with per-regime slopes drawn
///   from U(−0.08, 0.08), reflecting off the [40, 300] band; regime
///   boundaries sit at distinct random multiples of the period;
/// - spikes: per-step Bernoulli thinning at rate `spike_rate/base_period`,
///   height `spike_magnitude * std(base+trend) * U(0.75, 1.25)`;
/// - noise: i.i.d. Gaussian with std `noise_std * amplitude(base)`.
///
/// The sum is clipped at zero. Each component uses its own substream, so
/// e.g. turning spikes off leaves trend and noise bit-identical.
pub fn generate_synthetic_parts(cfg: &SyntheticConfig) -> Result<(FlowSeries, SyntheticParts)> {
    cfg.validate()?;
    let len = cfg.length;
    let period = cfg.base_period;

    let base: Vec<f64> = (0..len).map(|t| BASE_SCALE * profile(t % period, period)).collect();

    // Trend: pick regime boundaries (distinct period multiples), then walk.
    let mut trend_rng = stream(cfg.seed, "synthetic.trend");
    let candidates = len / period; // boundaries may fall at period, 2*period, ...
    let mut boundaries: Vec<usize> =
        rand::seq::index::sample(&mut trend_rng, candidates - 1, cfg.regime_count - 1)
            .into_iter()
            .map(|i| (i + 1) * period)
            .collect();
    boundaries.sort_unstable();
    let slopes: Vec<f64> = (0..cfg.regime_count)
        .map(|_| trend_rng.gen_range(-SLOPE_BOUND..SLOPE_BOUND))
        .collect();

    let mut trend = Vec::with_capacity(len);
    let mut level = TREND_START;
    let mut seg = 0usize;
    let mut slope = slopes[0];
    for t in 0..len {
        if seg < boundaries.len() && t == boundaries[seg] {
            seg += 1;
            slope = slopes[seg];
        }
        if t > 0 {
            level += slope;
            // Reflect off the band edges; the flipped sign persists until
            // the next regime boundary.
            if level > TREND_MAX {
                level = 2.0 * TREND_MAX - level;
                slope = -slope;
            } else if level < TREND_MIN {
                level = 2.0 * TREND_MIN - level;
                slope = -slope;
            }
        }
        trend.push(level);
    }

    // Spike height reference: std of the smooth (base + trend) series.
    let smooth: Vec<f64> = base.iter().zip(&trend).map(|(b, tr)| b + tr).collect();
    let mean = smooth.iter().sum::<f64>() / len as f64;
    let std_ref =
        (smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64).sqrt();

    let mut spike_rng = stream(cfg.seed, "synthetic.spikes");
    let p_spike = (cfg.spike_rate / period as f64).min(1.0);
    let mut spikes = vec![0.0; len];
    for s in spikes.iter_mut() {
        if spike_rng.gen::<f64>() < p_spike {
            *s = cfg.spike_magnitude * std_ref * spike_rng.gen_range(0.75..1.25);
        }
    }

    let base_min = base.iter().cloned().fold(f64::INFINITY, f64::min);
    let base_max = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let amplitude = 0.5 * (base_max - base_min);
    let mut noise_rng = stream(cfg.seed, "synthetic.noise");
    let noise: Vec<f64> = (0..len)
        .map(|_| cfg.noise_std * amplitude * noise_rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();

    let values: Vec<f64> = (0..len)
        .map(|t| (base[t] + trend[t] + spikes[t] + noise[t]).max(0.0))
        .collect();
    let series = FlowSeries::new(timestamps(len), values)?;
    Ok((
        series,
        SyntheticParts {
            base,
            trend,
            spikes,
            noise,
        },
    ))
}
