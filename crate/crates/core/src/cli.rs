//! Command-line commands: generate / train / evaluate / ablate / analyze.
//!
//! Every command writes a fully resolved `config.resolved` echo into the
//! output directory so the run can be replayed from its artifacts alone.
//! Errors surface as single-line messages; exit code 1 means an internal
//! numeric failure, 2 a config/input problem.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::dataflow::{
    generate_synthetic, load_csv, make_windows, save_csv, FlowSeries, SplitOptions, WindowSplits,
};
use crate::error::{io_err, FcError, Result};
use crate::evalbench::{
    dominant_period, export_patch_coverage, improvement, metrics_csv, metrics_over,
    seasonal_naive, MetricReport, HORIZON_ANCHORS,
};
use crate::model::{ModelState, Variant};
use crate::training::{evaluate, train};

pub const CONFIG_ECHO: &str = "config.resolved";
pub const DATASET_CSV: &str = "dataset.csv";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const HISTORY_CSV: &str = "history.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const IMPROVEMENT_CSV: &str = "improvement.csv";
pub const PERIOD_FILE: &str = "period.txt";
pub const COVERAGE_CSV: &str = "coverage.csv";

/// Deformable temporal–spectral forecasting laboratory.
#[derive(Debug, Parser)]
#[command(name = "flowcast", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Args)]
pub struct Common {
    /// Path to a `key = value` config file (defaults apply when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root random seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset CSV plus the resolved config.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoint, history CSV and resolved config.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured dataset's test split,
    /// alongside a seasonal-naive baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train all ablation arms (FULL, FP, LM, LT) on one dataset and
    /// tabulate test metrics plus improvement ratios of FULL over each arm.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Emit the dataset's dominant period and the model's patch coverage.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Optional trained checkpoint; a freshly initialized model is
        /// used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Config file → overrides → validated RunConfig.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::parse_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let echo = cfg.out.join(CONFIG_ECHO);
    std::fs::write(&echo, cfg.render()).map_err(|e| io_err(&echo, e))
}

/// Loads the raw (original-unit) series the config points at.
fn load_raw_series(cfg: &RunConfig) -> Result<FlowSeries> {
    match &cfg.source {
        DataSource::Synthetic => generate_synthetic(&cfg.synth_with_seed()),
        DataSource::Csv(path) => {
            let loaded = load_csv(path)?;
            if loaded.drop_fraction > 0.0 || loaded.interpolated > 0 {
                println!(
                    "note: kept longest clean segment ({:.1}% of rows dropped, {} values interpolated)",
                    loaded.drop_fraction * 100.0,
                    loaded.interpolated
                );
            }
            Ok(loaded.series)
        }
    }
}

fn split_options(cfg: &RunConfig) -> SplitOptions {
    SplitOptions {
        fractions: (
            cfg.train_fraction,
            cfg.val_fraction,
            1.0 - cfg.train_fraction - cfg.val_fraction,
        ),
        embargo: cfg.embargo,
    }
}

/// Applies a stored normalization to a raw series.
fn normalize_with(raw: &FlowSeries, norm: crate::dataflow::Norm) -> FlowSeries {
    FlowSeries {
        timestamps: raw.timestamps.clone(),
        values: raw.values.iter().map(|&v| norm.apply(v)).collect(),
        norm: Some(norm),
    }
}

/// The seasonal period used for the naive baseline: the configured base
/// period for synthetic data, the measured dominant period for CSV data.
fn baseline_period(cfg: &RunConfig, raw: &FlowSeries) -> usize {
    match cfg.source {
        DataSource::Synthetic => cfg.synth.base_period,
        DataSource::Csv(_) => dominant_period(&raw.values),
    }
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    if cfg.source != DataSource::Synthetic {
        return Err(FcError::Config(
            "generate requires data.source = synthetic".into(),
        ));
    }
    ensure_out(cfg)?;
    let series = generate_synthetic(&cfg.synth_with_seed())?;
    let path = cfg.out.join(DATASET_CSV);
    save_csv(&series, &path)?;
    println!("wrote {} ({} rows)", path.display(), series.len());
    Ok(())
}

/// Normalizes, windows and splits the configured dataset. Returns the raw
/// series, the normalization in effect, the splits over the normalized
/// series, and the splits over the raw series (same anchors, original
/// units). `norm_from` reuses a stored normalization (evaluation path);
/// `None` fits one on the train fraction.
fn prepare_data(
    cfg: &RunConfig,
    norm_from: Option<crate::dataflow::Norm>,
) -> Result<(FlowSeries, crate::dataflow::Norm, WindowSplits, WindowSplits)> {
    let raw = load_raw_series(cfg)?;
    let normalized = match norm_from {
        Some(norm) => normalize_with(&raw, norm),
        None => crate::dataflow::zscore_fit_apply(&raw, cfg.train_fraction)?,
    };
    let norm = normalized
        .norm
        .expect("normalized series always carries its transform");
    let opts = split_options(cfg);
    let splits_z = make_windows(&normalized, cfg.m, cfg.n, opts)?;
    let splits_raw = make_windows(&raw, cfg.m, cfg.n, opts)?;
    Ok((raw, norm, splits_z, splits_raw))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    ensure_out(cfg)?;
    let (_, norm, splits_z, _) = prepare_data(cfg, None)?;
    let mut model = ModelState::init(cfg.dims(), cfg.variant, cfg.seed)?;
    // The normalization used for training travels with the checkpoint.
    model.data_norm = Some(norm);
    let (best, history) = train(&model, &splits_z.train, &splits_z.val, &cfg.train_with_seed())?;
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&best, &ckpt)?;
    let hist_path = cfg.out.join(HISTORY_CSV);
    std::fs::write(&hist_path, history.to_csv()).map_err(|e| io_err(&hist_path, e))?;
    println!(
        "trained {} epochs (best {} @ val loss {:.6}, stopped by {}); wrote {} and {}",
        history.epochs.len(),
        history.best_epoch,
        history
            .epochs
            .iter()
            .find(|e| e.epoch == history.best_epoch)
            .map(|e| e.val_loss)
            .unwrap_or(f64::NAN),
        history.stopping_reason,
        ckpt.display(),
        hist_path.display()
    );
    Ok(ckpt)
}

/// Seasonal-naive forecasts for each raw test window.
fn baseline_forecasts(
    raw_windows: &[crate::dataflow::WindowSample],
    n: usize,
    period: usize,
) -> Result<Vec<Vec<f64>>> {
    raw_windows
        .iter()
        .map(|w| seasonal_naive(&w.history, n, period))
        .collect()
}

/// Per-anchor reports for model predictions and the baseline, against raw
/// targets.
fn report_rows(
    tag: &str,
    preds: &[Vec<f64>],
    base: &[Vec<f64>],
    truths: &[Vec<f64>],
    n: usize,
) -> Result<Vec<(String, MetricReport)>> {
    let mut rows = Vec::new();
    for &h in HORIZON_ANCHORS.iter().filter(|&&h| h <= n) {
        rows.push((tag.to_string(), metrics_over(preds, truths, h)?));
        rows.push((
            "seasonal_naive".to_string(),
            metrics_over(base, truths, h)?,
        ));
    }
    Ok(rows)
}

pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: &Path) -> Result<()> {
    ensure_out(cfg)?;
    let state = load_checkpoint(checkpoint)?;
    if state.dims.l != cfg.m || state.dims.horizon != cfg.n {
        return Err(FcError::Shape(format!(
            "checkpoint expects history {} / horizon {} but the config asks for {} / {}",
            state.dims.l, state.dims.horizon, cfg.m, cfg.n
        )));
    }
    // Reuse the checkpoint's normalization; a checkpoint without one was
    // trained on raw units, which the identity transform preserves.
    let norm = state.data_norm.unwrap_or(crate::dataflow::Norm {
        mean: 0.0,
        std: 1.0,
    });
    let (raw, _, splits_z, splits_raw) = prepare_data(cfg, Some(norm))?;
    if splits_z.test.is_empty() {
        return Err(FcError::Data("test split is empty".into()));
    }
    let eval = evaluate(&state, &splits_z.test)?;
    let truths: Vec<Vec<f64>> = splits_raw.test.iter().map(|w| w.target.clone()).collect();
    let period = baseline_period(cfg, &raw);
    let base = baseline_forecasts(&splits_raw.test, cfg.n, period)?;
    let rows = report_rows(state.variant.tag(), &eval.predictions, &base, &truths, cfg.n)?;
    let path = cfg.out.join(METRICS_CSV);
    std::fs::write(&path, metrics_csv(&rows)).map_err(|e| io_err(&path, e))?;
    println!(
        "evaluated {} test windows (z-space MSE {:.6}); wrote {}",
        splits_z.test.len(),
        eval.mse_z,
        path.display()
    );
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    ensure_out(cfg)?;
    let (_, norm, splits_z, splits_raw) = prepare_data(cfg, None)?;
    if splits_z.test.is_empty() {
        return Err(FcError::Data("test split is empty".into()));
    }
    let truths: Vec<Vec<f64>> = splits_raw.test.iter().map(|w| w.target.clone()).collect();
    let variants = [
        Variant::Full,
        Variant::FixedPatch {
            patch_len: cfg.patch_len,
        },
        Variant::LinearMap,
        Variant::LinearTail,
    ];
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let mut full_reports: Vec<MetricReport> = Vec::new();
    let mut other_reports: Vec<(String, Vec<MetricReport>)> = Vec::new();
    for variant in variants {
        let mut model = ModelState::init(cfg.dims(), variant, cfg.seed)?;
        model.data_norm = Some(norm);
        let (best, _) = train(&model, &splits_z.train, &splits_z.val, &cfg.train_with_seed())?;
        let eval = evaluate(&best, &splits_z.test)?;
        let mut reports = Vec::new();
        for &h in HORIZON_ANCHORS.iter().filter(|&&h| h <= cfg.n) {
            let r = metrics_over(&eval.predictions, &truths, h)?;
            rows.push((variant.tag().to_string(), r));
            reports.push(r);
        }
        if variant == Variant::Full {
            full_reports = reports;
        } else {
            other_reports.push((variant.tag().to_string(), reports));
        }
        println!("trained and evaluated {}", variant.tag());
    }
    let path = cfg.out.join(ABLATION_CSV);
    std::fs::write(&path, metrics_csv(&rows)).map_err(|e| io_err(&path, e))?;

    let mut imp = String::from(
        "baseline,horizon_steps,mse_improvement_percent,mae_improvement_percent\n",
    );
    for (tag, reports) in &other_reports {
        for (r, full) in reports.iter().zip(&full_reports) {
            imp.push_str(&format!(
                "{},{},{:.4},{:.4}\n",
                tag,
                r.horizon_steps,
                improvement(r.mse, full.mse)?,
                improvement(r.mae, full.mae)?
            ));
        }
    }
    let imp_path = cfg.out.join(IMPROVEMENT_CSV);
    std::fs::write(&imp_path, imp).map_err(|e| io_err(&imp_path, e))?;
    println!("wrote {} and {}", path.display(), imp_path.display());
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    ensure_out(cfg)?;
    let raw = load_raw_series(cfg)?;
    let period = dominant_period(&raw.values);
    let period_path = cfg.out.join(PERIOD_FILE);
    std::fs::write(&period_path, format!("{period}\n")).map_err(|e| io_err(&period_path, e))?;
    let model = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => ModelState::init(cfg.dims(), cfg.variant, cfg.seed)?,
    };
    let cov_path = cfg.out.join(COVERAGE_CSV);
    export_patch_coverage(&model, &cov_path)?;
    println!(
        "dominant period {period} steps; wrote {} and {}",
        period_path.display(),
        cov_path.display()
    );
    Ok(())
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { common } => cmd_generate(&resolve_config(common)?),
        Command::Train { common } => cmd_train(&resolve_config(common)?).map(|_| ()),
        Command::Evaluate { common, checkpoint } => {
            cmd_evaluate(&resolve_config(common)?, checkpoint)
        }
        Command::Ablate { common } => cmd_ablate(&resolve_config(common)?),
        Command::Analyze { common, checkpoint } => {
            cmd_analyze(&resolve_config(common)?, checkpoint.as_deref())
        }
    }
}
