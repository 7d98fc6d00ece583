//! Run configuration: a flat `key = value` file format with section
//! prefixes (`data.`, `model.`, `train.`), defaults for every field, and a
//! renderer that echoes the fully resolved configuration so any run can be
//! replayed from its output directory alone.

use std::path::{Path, PathBuf};

use crate::dataflow::SyntheticConfig;
use crate::error::{io_err, FcError, Result};
use crate::model::{ModelDims, Variant};
use crate::training::TrainConfig;

/// Where the input series comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

/// Everything a command needs, resolved from defaults plus a config file
/// plus command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed; every random stream (synthetic data, parameter init,
    /// epoch shuffling) derives from it under a distinct name.
    pub seed: u64,
    pub out: PathBuf,
    pub source: DataSource,
    /// Synthetic-generator settings (its seed is overridden by `seed`).
    pub synth: SyntheticConfig,
    /// History steps fed to the model.
    pub m: usize,
    /// Forecast steps produced by the model.
    pub n: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Drop validation/test windows whose history overlaps the previous
    /// split's targets.
    pub embargo: bool,
    pub variant: Variant,
    /// Fixed patch length used when `variant` is the fixed-patch arm.
    pub patch_len: usize,
    pub scales: usize,
    pub d_m: usize,
    pub d_k: usize,
    pub heads: usize,
    pub threshold_b: f64,
    pub e_layers: usize,
    pub d_ff: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("out"),
            source: DataSource::Synthetic,
            synth: SyntheticConfig::default(),
            m: 48,
            n: 6,
            train_fraction: 0.7,
            val_fraction: 0.1,
            embargo: false,
            variant: Variant::Full,
            patch_len: 6,
            scales: 3,
            d_m: 16,
            d_k: 48,
            heads: 8,
            threshold_b: 0.6,
            e_layers: 4,
            d_ff: 256,
            train: TrainConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        FcError::Config(format!("key `{key}`: cannot parse `{value}`"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(FcError::Config(format!(
            "key `{key}`: expected `true` or `false`, got `{value}`"
        ))),
    }
}

impl RunConfig {
    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "data.source" => match value {
                "synthetic" => self.source = DataSource::Synthetic,
                "csv" => {
                    if !matches!(self.source, DataSource::Csv(_)) {
                        self.source = DataSource::Csv(PathBuf::new());
                    }
                }
                _ => {
                    return Err(FcError::Config(format!(
                        "key `data.source`: expected `synthetic` or `csv`, got `{value}`"
                    )))
                }
            },
            "data.csv_path" => self.source = DataSource::Csv(PathBuf::from(value)),
            "data.length" => self.synth.length = parse_num(key, value)?,
            "data.base_period" => self.synth.base_period = parse_num(key, value)?,
            "data.regime_count" => self.synth.regime_count = parse_num(key, value)?,
            "data.spike_rate" => self.synth.spike_rate = parse_num(key, value)?,
            "data.spike_magnitude" => self.synth.spike_magnitude = parse_num(key, value)?,
            "data.noise_std" => self.synth.noise_std = parse_num(key, value)?,
            "data.m" => self.m = parse_num(key, value)?,
            "data.n" => self.n = parse_num(key, value)?,
            "data.train_fraction" => self.train_fraction = parse_num(key, value)?,
            "data.val_fraction" => self.val_fraction = parse_num(key, value)?,
            "data.embargo" => self.embargo = parse_bool(key, value)?,
            "model.variant" => {
                self.variant = match value {
                    "FULL" => Variant::Full,
                    "FP" => Variant::FixedPatch {
                        patch_len: self.patch_len,
                    },
                    "LM" => Variant::LinearMap,
                    "LT" => Variant::LinearTail,
                    _ => {
                        return Err(FcError::Config(format!(
                            "key `model.variant`: expected FULL, FP, LM or LT, got `{value}`"
                        )))
                    }
                }
            }
            "model.patch_len" => {
                self.patch_len = parse_num(key, value)?;
                if matches!(self.variant, Variant::FixedPatch { .. }) {
                    self.variant = Variant::FixedPatch {
                        patch_len: self.patch_len,
                    };
                }
            }
            "model.scales" => self.scales = parse_num(key, value)?,
            "model.d_m" => self.d_m = parse_num(key, value)?,
            "model.d_k" => self.d_k = parse_num(key, value)?,
            "model.heads" => self.heads = parse_num(key, value)?,
            "model.threshold_b" => self.threshold_b = parse_num(key, value)?,
            "model.e_layers" => self.e_layers = parse_num(key, value)?,
            "model.d_ff" => self.d_ff = parse_num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value)?,
            "train.patience" => self.train.patience = parse_num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse_num(key, value)?,
            "train.timing" => self.train.timing = parse_bool(key, value)?,
            _ => {
                return Err(FcError::Config(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    /// Parses config text, starting from defaults. Lines are `key = value`;
    /// `#` starts a comment; unknown and duplicate keys are errors.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                FcError::Config(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(FcError::Config(format!(
                    "config line {}: duplicate key `{key}`",
                    i + 1
                )));
            }
            cfg.apply(key, value)?;
        }
        Ok(cfg)
    }

    /// Reads and parses a config file.
    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse_str(&text)
    }

    /// Renders every field explicitly in the file format `parse_str` reads.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("out = {}\n", self.out.display()));
        match &self.source {
            DataSource::Synthetic => s.push_str("data.source = synthetic\n"),
            DataSource::Csv(p) => {
                s.push_str("data.source = csv\n");
                s.push_str(&format!("data.csv_path = {}\n", p.display()));
            }
        }
        s.push_str(&format!("data.length = {}\n", self.synth.length));
        s.push_str(&format!("data.base_period = {}\n", self.synth.base_period));
        s.push_str(&format!("data.regime_count = {}\n", self.synth.regime_count));
        s.push_str(&format!("data.spike_rate = {}\n", self.synth.spike_rate));
        s.push_str(&format!(
            "data.spike_magnitude = {}\n",
            self.synth.spike_magnitude
        ));
        s.push_str(&format!("data.noise_std = {}\n", self.synth.noise_std));
        s.push_str(&format!("data.m = {}\n", self.m));
        s.push_str(&format!("data.n = {}\n", self.n));
        s.push_str(&format!("data.train_fraction = {}\n", self.train_fraction));
        s.push_str(&format!("data.val_fraction = {}\n", self.val_fraction));
        s.push_str(&format!("data.embargo = {}\n", self.embargo));
        s.push_str(&format!("model.variant = {}\n", self.variant.tag()));
        s.push_str(&format!("model.patch_len = {}\n", self.patch_len));
        s.push_str(&format!("model.scales = {}\n", self.scales));
        s.push_str(&format!("model.d_m = {}\n", self.d_m));
        s.push_str(&format!("model.d_k = {}\n", self.d_k));
        s.push_str(&format!("model.heads = {}\n", self.heads));
        s.push_str(&format!("model.threshold_b = {}\n", self.threshold_b));
        s.push_str(&format!("model.e_layers = {}\n", self.e_layers));
        s.push_str(&format!("model.d_ff = {}\n", self.d_ff));
        s.push_str(&format!("train.learning_rate = {}\n", self.train.learning_rate));
        s.push_str(&format!("train.batch_size = {}\n", self.train.batch_size));
        s.push_str(&format!("train.patience = {}\n", self.train.patience));
        s.push_str(&format!("train.max_epochs = {}\n", self.train.max_epochs));
        s.push_str(&format!("train.timing = {}\n", self.train.timing));
        s
    }

    /// The model dimensions implied by this configuration.
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            l: self.m,
            horizon: self.n,
            scales: self.scales,
            d_m: self.d_m,
            d_k: self.d_k,
            heads: self.heads,
            d_ff: self.d_ff,
            e_layers: self.e_layers,
            threshold_b: self.threshold_b,
        }
    }

    /// A copy of the synthetic settings carrying the root seed.
    pub fn synth_with_seed(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// A copy of the training settings carrying the root seed.
    pub fn train_with_seed(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    /// Checks cross-field consistency; individual modules re-validate their
    /// own inputs at use time.
    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        self.train.validate()?;
        if let DataSource::Csv(p) = &self.source {
            if p.as_os_str().is_empty() {
                return Err(FcError::Config(
                    "data.source = csv requires data.csv_path".into(),
                ));
            }
        }
        if self.source == DataSource::Synthetic {
            self.synth_with_seed().validate()?;
        }
        for (name, f) in [
            ("data.train_fraction", self.train_fraction),
            ("data.val_fraction", self.val_fraction),
        ] {
            if !(f.is_finite() && f > 0.0 && f < 1.0) {
                return Err(FcError::Config(format!(
                    "{name} must lie strictly between 0 and 1, got {f}"
                )));
            }
        }
        if self.train_fraction + self.val_fraction >= 1.0 {
            return Err(FcError::Config(format!(
                "train_fraction + val_fraction must leave room for a test split, got {}",
                self.train_fraction + self.val_fraction
            )));
        }
        if self.patch_len == 0 || self.patch_len > self.m {
            return Err(FcError::Config(format!(
                "model.patch_len must lie in 1..={}, got {}",
                self.m, self.patch_len
            )));
        }
        Ok(())
    }
}
