//! Acceptance suite: one test per shipped guarantee, named `criterion_NN_*`
//! so the harness emits one pass/fail line per criterion. Each test also
//! prints a `PASS criterion NN` line with the measured numbers (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Criteria 06 and 07 share one lazily trained benchmark: nine full-size
//! models (three seeds × FULL/FP/LM) on the heterogeneous synthetic series.
//! That fixture dominates the suite's runtime; everything else finishes in
//! seconds to minutes.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::NaiveDate;
use rand::Rng;

use flowcast::cli;
use flowcast::config::RunConfig;
use flowcast::dataflow::{
    calendar_features, generate_synthetic, make_windows, zscore_fit_apply, CalendarFeatures,
    SplitOptions, SyntheticConfig,
};
use flowcast::deformable::{binarize, describe_patches, window_soft, DeformableScale};
use flowcast::evalbench::{dominant_period, improvement, metrics_over, seasonal_naive};
use flowcast::model::{MaskMode, ModelDims, ModelState, Variant};
use flowcast::numerics::{dft_real, grad_check, ParamGrads, Tensor};
use flowcast::rng::stream;
use flowcast::spectral::frequency_features;
use flowcast::training::{evaluate, train, TrainConfig};

fn pass(criterion: u32, detail: &str) {
    println!("PASS criterion {criterion:02}: {detail}");
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

// ---------------------------------------------------------------------------
// Criterion 1: the half-spectrum transform against an independent oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_spectrum_matches_naive_dft_oracle() {
    let mut rng = stream(414, "acceptance.dft");
    let mut worst: f64 = 0.0;
    for l in [4usize, 48, 96, 97] {
        for _ in 0..100 {
            let x: Vec<f64> = (0..l).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let spec = dft_real(&x).unwrap();
            assert_eq!(spec.len(), l / 2 + 1);
            // Naive O(L²) oracle straight from the definition, with angles
            // computed directly (the library reduces k·n mod L first, so the
            // two paths share no intermediate values).
            for k in 0..=l / 2 {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, &v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / l as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                worst = worst.max((spec.re[k] - re).abs()).max((spec.im[k] - im).abs());
            }
        }
    }
    assert!(worst < 1e-9, "worst oracle deviation {worst:.3e}");
    pass(
        1,
        &format!("100 random vectors × L ∈ {{4,48,96,97}}, worst |Δ| {worst:.2e} < 1e-9"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: central finite differences across every trainable group of
// the full micro model.
// ---------------------------------------------------------------------------

fn micro_dims() -> ModelDims {
    ModelDims {
        l: 16,
        horizon: 2,
        scales: 2,
        d_m: 8,
        d_k: 16,
        heads: 2,
        d_ff: 32,
        e_layers: 2,
        threshold_b: 0.6,
    }
}

/// Deterministic history window plus matching calendar features.
fn micro_fixture(l: usize) -> (Vec<f64>, Vec<CalendarFeatures>) {
    let start = NaiveDate::from_ymd_opt(2024, 2, 5)
        .unwrap()
        .and_hms_opt(6, 0, 0)
        .unwrap();
    let history: Vec<f64> = (0..l)
        .map(|t| (t as f64 * 0.61).sin() * 1.4 + 0.2 * t as f64 - 1.0)
        .collect();
    let calendar = (0..l)
        .map(|t| calendar_features(start + chrono::Duration::minutes(30 * t as i64)))
        .collect();
    (history, calendar)
}

#[test]
fn criterion_02_every_parameter_group_passes_finite_differences() {
    let model = ModelState::init(micro_dims(), Variant::Full, 13).unwrap();
    let (history, calendar) = micro_fixture(16);
    let target = vec![0.35, -0.8];

    // Exclusion guard: finite differences are only meaningful away from the
    // binarization threshold, so require every soft-mask activation to sit
    // farther than 1e-4 from it at the probe point.
    for mask in model.current_masks() {
        for s in &mask.soft {
            assert!(
                (s - micro_dims().threshold_b).abs() > 1e-4,
                "probe point sits within 1e-4 of the mask threshold; pick another seed"
            );
        }
    }

    let mut worst: f64 = 0.0;
    let groups = model.names.len();
    for (slot, name) in model.names.iter().enumerate() {
        // Mask parameters are trained through the straight-through contract:
        // their backward pass is defined as the gradient of the relaxed
        // (soft-weighted) forward, so that is the objective to difference.
        // Every other group is checked under the hard mask used in training.
        let mode = if name.starts_with("mask.") {
            MaskMode::Relaxed
        } else {
            MaskMode::Hard
        };
        let eval = |t: &Tensor, want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut m2 = model.clone();
            m2.params[slot] = t.clone().with_grad();
            let (mut g, loss) = m2.loss_graph(&history, &calendar, &target, mode).unwrap();
            let val = g.scalar(loss);
            if !want_grad {
                return (val, None);
            }
            let mut sink = ParamGrads::like(&m2.params);
            g.backward(loss, &mut sink).unwrap();
            (val, Some(sink.slot(slot).to_vec()))
        };
        let point = model.params[slot].clone();
        // Step size 1e-4: the loss is O(1) while some groups' gradient norms
        // are ~1e-7, so the f64 rounding noise of a central difference
        // (∝ ε·|f|/h) dominates smaller steps; truncation error at this step
        // is still orders of magnitude below the tolerance.
        let err = grad_check(|t| eval(t, false).0, |t| eval(t, true).1.unwrap(), &point, 1e-4)
            .unwrap();
        assert!(err < 1e-3, "group `{name}` gradient error {err:.3e} >= 1e-3");
        worst = worst.max(err);
    }
    pass(
        2,
        &format!("{groups} parameter groups, worst norm-wise relative error {worst:.2e} < 1e-3"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: band components reassemble the embedding exactly.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_band_components_sum_back_to_the_embedding() {
    let mut rng = stream(415, "acceptance.bands");
    let mut worst: f64 = 0.0;
    for l in [8usize, 48] {
        let d = 8;
        for _ in 0..25 {
            let e = Tensor::from_fn(l, d, |_, _| rng.gen_range(-2.0..2.0));
            let a = frequency_features(&e);
            let bands = l / 2 + 1;
            assert_eq!((a.rows, a.cols), (l, bands * d));
            for t in 0..l {
                for c in 0..d {
                    let total: f64 = (0..bands).map(|k| a.at(t, k * d + c)).sum();
                    worst = worst.max((total - e.at(t, c)).abs());
                }
            }
        }
    }
    assert!(worst < 1e-8, "worst band-sum deviation {worst:.3e}");
    pass(
        3,
        &format!("25 random embeddings × L ∈ {{8,48}}, worst |Σ bands − E| {worst:.2e} < 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: soft-mask bounds, threshold monotonicity, run uniformity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_mask_bounds_monotonicity_and_run_uniformity() {
    // (a) Range bounds: the pre-sigmoid raised cosine lives in [0.08, 1.0],
    // so every soft value lies in (σ(0.08), σ(1.0)) ≈ (0.51999, 0.73106).
    // The lower bound is attained at t = 0 for φ = 0 and the upper at the
    // half-period point when it falls on the grid.
    let (lo, hi) = (0.51999, 0.73106);
    let mut rng = stream(416, "acceptance.mask");
    let mut seen_lo = f64::INFINITY;
    let mut seen_hi = f64::NEG_INFINITY;
    for _ in 0..200 {
        let omega = rng.gen_range(0.05..4.0);
        let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let len = rng.gen_range(4usize..128);
        let s = DeformableScale::new(omega, phi, 0.6, 0).unwrap();
        for v in window_soft(&s, len) {
            assert!(v > lo - 1e-5 && v < hi + 1e-5, "soft value {v} out of bounds");
            seen_lo = seen_lo.min(v);
            seen_hi = seen_hi.max(v);
        }
    }
    // Extremal t: φ = 0 puts the cosine peak at t = 0 (lower bound); ω = 1
    // puts the trough at t = (L−1)/2 (upper bound).
    let s = DeformableScale::new(1.0, 0.0, 0.6, 0).unwrap();
    let soft = window_soft(&s, 9);
    assert!((soft[0] - lo).abs() < 1e-5, "lower bound at t=0: {}", soft[0]);
    assert!((soft[4] - hi).abs() < 1e-5, "upper bound at mid-span: {}", soft[4]);

    // (b) Threshold monotonicity: raising b can only deselect positions.
    let sweep = window_soft(&DeformableScale::new(0.29, 1.1, 0.6, 0).unwrap(), 64);
    let mut prev_selected = usize::MAX;
    for b in [0.52, 0.55, 0.6, 0.65, 0.7, 0.73] {
        let mask = binarize(sweep.clone(), b);
        let selected = mask.hard.iter().filter(|h| **h > 0.5).count();
        assert!(
            selected <= prev_selected,
            "selection grew from {prev_selected} to {selected} at b={b}"
        );
        prev_selected = selected;
    }

    // (c) Run near-uniformity: φ = 0 with ω·(L−1) dividing L evenly gives
    // runs whose lengths differ by at most one.
    let omega = 12.0 / 95.0;
    let soft = window_soft(&DeformableScale::new(omega, 0.0, 0.6, 0).unwrap(), 96);
    let d = describe_patches(&binarize(soft, 0.6));
    let max = *d.lengths.iter().max().unwrap();
    let min = *d.lengths.iter().min().unwrap();
    assert!(max - min <= 1, "harmonic runs uneven: {:?}", d.lengths);

    pass(
        4,
        &format!(
            "bounds ({lo}, {hi}) held across 200 random masks (observed [{seen_lo:.5}, {seen_hi:.5}]), \
             selection monotone in b, harmonic runs within ±1 ({} runs)",
            d.count
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: externally published figures are documented as reference
// values, not as targets this suite reproduces.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_reference_figures_documented_as_non_targets() {
    let readme_path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md");
    let readme = std::fs::read_to_string(readme_path).expect("workspace README exists");
    assert!(
        readme.contains("not reproduction targets"),
        "README must state that externally reported accuracy figures are not reproduction targets"
    );
    pass(
        5,
        "externally reported accuracy figures depend on a proprietary dataset; README documents \
         them as reference values, not reproduction targets — the property checks in this suite \
         stand in for them",
    );
}

// ---------------------------------------------------------------------------
// Criteria 6 & 7: the trained benchmark (shared fixture).
// ---------------------------------------------------------------------------

/// Epoch cap for the benchmark runs. Training keeps the shipped early-
/// stopping defaults (patience 40, constant learning rate); the cap only
/// bounds the fixture's runtime. Pilot runs show the model is still paying
/// down its spike-response error well past the first validation plateau, so
/// the cap sits where the improvement and ordering margins have stabilized.
/// The nine runs parallelize per batch; a multi-core desktop finishes the
/// fixture in tens of minutes, a single core in a few hours.
const BENCH_MAX_EPOCHS: usize = 60;

struct BenchOutcome {
    /// Per seed: (FULL test MAPE %, seasonal-naive test MAPE %, improvement %).
    mape_rows: Vec<(f64, f64, f64)>,
    /// Variant tag → per-seed test MSE (original units, full horizon).
    mse: BTreeMap<&'static str, Vec<f64>>,
}

static BENCH: OnceLock<BenchOutcome> = OnceLock::new();

fn bench() -> &'static BenchOutcome {
    BENCH.get_or_init(run_benchmark)
}

fn run_benchmark() -> BenchOutcome {
    let defaults = RunConfig::default();
    let dims = defaults.dims();
    let (m, n) = (defaults.m, defaults.n);
    let period = defaults.synth.base_period;
    let variants: [(&'static str, Variant); 3] = [
        ("FULL", Variant::Full),
        ("FP", Variant::FixedPatch { patch_len: defaults.patch_len }),
        ("LM", Variant::LinearMap),
    ];

    let mut mape_rows = Vec::new();
    let mut mse: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for seed in [1u64, 2, 3] {
        // One world per seed: its own series draw, split, initialization and
        // shuffling, with all three variants sharing the world exactly.
        let synth = SyntheticConfig { seed, ..defaults.synth.clone() };
        let raw = generate_synthetic(&synth).unwrap();
        let normalized = zscore_fit_apply(&raw, defaults.train_fraction).unwrap();
        let norm = normalized.norm.unwrap();
        let opts = SplitOptions::default();
        let splits_z = make_windows(&normalized, m, n, opts).unwrap();
        let splits_raw = make_windows(&raw, m, n, opts).unwrap();
        let truths: Vec<Vec<f64>> = splits_raw.test.iter().map(|w| w.target.clone()).collect();

        let naive: Vec<Vec<f64>> = splits_raw
            .test
            .iter()
            .map(|w| seasonal_naive(&w.history, n, period).unwrap())
            .collect();
        let naive_report = metrics_over(&naive, &truths, n).unwrap();

        for (tag, variant) in variants {
            let mut model = ModelState::init(dims, variant, seed).unwrap();
            model.data_norm = Some(norm);
            let tcfg = TrainConfig {
                seed,
                max_epochs: BENCH_MAX_EPOCHS,
                ..defaults.train
            };
            let (best, history) = train(&model, &splits_z.train, &splits_z.val, &tcfg).unwrap();
            let eval = evaluate(&best, &splits_z.test).unwrap();
            let report = metrics_over(&eval.predictions, &truths, n).unwrap();
            eprintln!(
                "benchmark seed {seed} {tag}: best epoch {}, test MSE {:.1}, MAPE {:.2}%",
                history.best_epoch,
                report.mse,
                report.mape_percent.unwrap_or(f64::NAN)
            );
            mse.entry(tag).or_default().push(report.mse);
            if tag == "FULL" {
                let full_mape = report.mape_percent.expect("targets are positive counts");
                let naive_mape = naive_report.mape_percent.expect("same targets");
                let imp = improvement(naive_mape, full_mape).unwrap();
                mape_rows.push((full_mape, naive_mape, imp));
            }
        }
    }
    BenchOutcome { mape_rows, mse }
}

#[test]
fn criterion_06_trained_full_model_beats_seasonal_naive_by_20_percent() {
    let b = bench();
    let imps: Vec<f64> = b.mape_rows.iter().map(|r| r.2).collect();
    let med = median(imps.clone());
    assert!(
        med >= 20.0,
        "median MAPE improvement over seasonal-naive {med:.2}% < 20% (per-seed {imps:?})"
    );
    let detail: Vec<String> = b
        .mape_rows
        .iter()
        .map(|(f, nv, i)| format!("{f:.2}% vs {nv:.2}% (+{i:.1}%)"))
        .collect();
    pass(
        6,
        &format!(
            "median MAPE improvement {med:.2}% ≥ 20% over 3 seeds [{}]",
            detail.join(", ")
        ),
    );
}

#[test]
fn criterion_07_ablation_ordering_full_below_fp_and_lm() {
    let b = bench();
    let full = median(b.mse["FULL"].clone());
    let fp = median(b.mse["FP"].clone());
    let lm = median(b.mse["LM"].clone());
    assert!(
        full < fp,
        "median test MSE: FULL {full:.2} must be below FP {fp:.2} (per-seed FULL {:?}, FP {:?})",
        b.mse["FULL"],
        b.mse["FP"]
    );
    assert!(
        full < lm,
        "median test MSE: FULL {full:.2} must be below LM {lm:.2} (per-seed FULL {:?}, LM {:?})",
        b.mse["FULL"],
        b.mse["LM"]
    );
    pass(
        7,
        &format!("median test MSE over 3 seeds: FULL {full:.1} < FP {fp:.1}, FULL < LM {lm:.1}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: dominant-period recovery on clean synthetic data.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_dominant_period_recovers_clean_base_periods_exactly() {
    for p in [24usize, 48, 96] {
        let cfg = SyntheticConfig {
            length: 10 * p,
            base_period: p,
            noise_std: 0.0,
            spike_rate: 0.0,
            ..SyntheticConfig::default()
        };
        let series = generate_synthetic(&cfg).unwrap();
        let found = dominant_period(&series.values);
        assert_eq!(found, p, "period {p} recovered as {found}");
    }
    pass(8, "noise-free base periods {24, 48, 96} recovered exactly");
}

// ---------------------------------------------------------------------------
// Criterion 9: the improvement-ratio arithmetic on published inputs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_improvement_ratio_reproduces_derived_figure() {
    let got = improvement(129.76, 56.02).unwrap();
    assert!(
        (got - 56.83).abs() <= 0.01,
        "improvement(129.76, 56.02) = {got:.4}, expected 56.83 ± 0.01"
    );
    pass(9, &format!("improvement(129.76, 56.02) = {got:.4}% = 56.83 ± 0.01"));
}

// ---------------------------------------------------------------------------
// Criterion 10: training determinism and split leakage.
// ---------------------------------------------------------------------------

const MICRO_TRAIN_CONFIG: &str = "\
seed = 5
data.length = 320
data.base_period = 16
data.regime_count = 2
data.spike_rate = 0.3
data.m = 16
data.n = 2
model.scales = 2
model.d_m = 8
model.d_k = 16
model.heads = 2
model.d_ff = 32
model.e_layers = 1
train.batch_size = 32
train.max_epochs = 3
train.patience = 3
";

#[test]
fn criterion_10_training_is_deterministic_and_splits_never_leak() {
    // (a) Two identical training commands produce byte-identical histories.
    let dir = tempfile::tempdir().unwrap();
    let mut histories = Vec::new();
    for sub in ["a", "b"] {
        let mut cfg = RunConfig::parse_str(MICRO_TRAIN_CONFIG).unwrap();
        cfg.out = dir.path().join(sub);
        cfg.validate().unwrap();
        cli::cmd_train(&cfg).unwrap();
        histories.push(std::fs::read(cfg.out.join(cli::HISTORY_CSV)).unwrap());
    }
    assert_eq!(
        histories[0], histories[1],
        "history CSVs from identical runs must match byte for byte"
    );

    // (b) Fifty random embargoed configurations: later splits never touch a
    // timestamp any earlier split used as a target, splits stay
    // chronological, and no sample is lost untracked.
    let mut rng = stream(417, "acceptance.splits");
    for case in 0..50u64 {
        let len = rng.gen_range(64usize..400);
        let m = rng.gen_range(1usize..=24);
        let n = rng.gen_range(1usize..=8);
        let ft = rng.gen_range(0.5..0.8);
        let fv = rng.gen_range(0.05..0.2);
        let synth = SyntheticConfig {
            length: len,
            base_period: 12,
            seed: case,
            ..SyntheticConfig::default()
        };
        let series = generate_synthetic(&synth).unwrap();
        let opts = SplitOptions {
            fractions: (ft, fv, 1.0 - ft - fv),
            embargo: true,
        };
        let splits = make_windows(&series, m, n, opts).unwrap();

        let total = len - m - n + 1;
        assert_eq!(
            splits.train.len()
                + splits.val.len()
                + splits.test.len()
                + splits.embargo_dropped.0
                + splits.embargo_dropped.1,
            total,
            "case {case}: samples lost untracked"
        );
        if let Some(last) = splits.train.last() {
            let cut = last.target_span().1;
            for s in splits.val.iter().chain(&splits.test) {
                assert!(
                    s.input_span().0 > cut,
                    "case {case}: sample at anchor {} shares timestamps with train targets",
                    s.anchor
                );
            }
        }
        if let Some(last) = splits.val.last() {
            let cut = last.target_span().1;
            for s in &splits.test {
                assert!(
                    s.input_span().0 > cut,
                    "case {case}: test sample at anchor {} overlaps val targets",
                    s.anchor
                );
            }
        }
        for list in [&splits.train, &splits.val, &splits.test] {
            for pair in list.windows(2) {
                assert!(pair[0].anchor < pair[1].anchor, "case {case}: split not chronological");
            }
        }
    }
    pass(
        10,
        "two identical runs gave byte-identical history CSVs; 50 random embargoed splits show \
         no timestamp leakage",
    );
}
