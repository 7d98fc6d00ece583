//! Full model assembly: parameter layout, initialization, variants, and the
//! end-to-end forward pass from a raw history window to a forecast.
//!
//! Pipeline per sample: instance-normalize the window; for each scale, build
//! the learnable window mask and select positions (straight-through
//! gradients); embed the masked sequence (token convolution + positional +
//! calendar); run spectral attention per scale; concatenate scales; fuse
//! with stacked multi-head attention blocks; flatten into the affine
//! forecast head; invert the instance normalization.

use std::collections::HashMap;

use crate::dataflow::{CalendarFeatures, Norm};
use crate::deformable::{binarize, instance_norm, PatchMask};
use crate::embedding::{calendar_indices, hybrid_embed, positional_encoding, TABLE_ROWS};
use crate::error::{FcError, Result};
use crate::fusion::{fusion_block, project_head, FusionBlockNodes, FusionShapes};
use crate::numerics::{GradGraph, NodeId, Tensor};
use crate::rng::stream;
use crate::spectral::frequency_attention;

/// Structural hyperparameters; the parameter layout is a pure function of
/// these plus the variant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    /// History window length L (= m).
    pub l: usize,
    /// Forecast horizon n.
    pub horizon: usize,
    /// Number of mask scales S.
    pub scales: usize,
    /// Embedding width per scale.
    pub d_m: usize,
    /// Fusion attention width.
    pub d_k: usize,
    /// Fusion head count.
    pub heads: usize,
    /// Fusion feed-forward width.
    pub d_ff: usize,
    /// Number of fusion blocks.
    pub e_layers: usize,
    /// Mask binarization threshold b.
    pub threshold_b: f64,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.l < 2 {
            return Err(FcError::Config(format!(
                "history length must be at least 2, got {}",
                self.l
            )));
        }
        if self.horizon == 0 {
            return Err(FcError::Config("forecast horizon must be positive".into()));
        }
        if self.scales == 0 {
            return Err(FcError::Config("scale count must be positive".into()));
        }
        if self.d_m == 0 || self.d_m % 2 != 0 {
            return Err(FcError::Config(format!(
                "embedding width must be even and positive, got {}",
                self.d_m
            )));
        }
        if !(self.threshold_b > 0.0 && self.threshold_b < 1.0) {
            return Err(FcError::Config(format!(
                "mask threshold must lie in (0, 1), got {}",
                self.threshold_b
            )));
        }
        self.fusion_shapes().validate()
    }

    pub fn fusion_shapes(&self) -> FusionShapes {
        FusionShapes {
            scales: self.scales,
            d_m: self.d_m,
            d_k: self.d_k,
            heads: self.heads,
            d_ff: self.d_ff,
            e_layers: self.e_layers,
        }
    }

    /// Half-spectrum band count ⌊L/2⌋+1 used by the spectral features.
    pub fn bands(&self) -> usize {
        self.l / 2 + 1
    }
}

/// Model variants: the full model and the three reduced forms used by the
/// ablation benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// Complete model.
    Full,
    /// Fixed contiguous patches instead of learnable masks: the window is
    /// tiled by patches of `patch_len`; every position is selected and the
    /// mask parameters do not exist.
    FixedPatch { patch_len: usize },
    /// Spectral queries/keys replaced by plain linear projections of the
    /// embedding; the spectral feature matrix is never built.
    LinearMap,
    /// Fusion attention stack replaced by a single linear map.
    LinearTail,
}

impl Variant {
    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Full => "FULL",
            Variant::FixedPatch { .. } => "FP",
            Variant::LinearMap => "LM",
            Variant::LinearTail => "LT",
        }
    }

    /// Parses a variant tag; FP takes the default patch length 6.
    pub fn from_tag(tag: &str) -> Result<Variant> {
        match tag {
            "FULL" => Ok(Variant::Full),
            "FP" => Ok(Variant::FixedPatch { patch_len: 6 }),
            "LM" => Ok(Variant::LinearMap),
            "LT" => Ok(Variant::LinearTail),
            other => Err(FcError::Config(format!(
                "unknown variant `{other}` (expected FULL, FP, LM, or LT)"
            ))),
        }
    }
}

/// How initialization fills a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform(−√(1/fan_in), √(1/fan_in)) with fan_in = row count.
    FanIn,
    Zero,
    One,
    /// ln(ω₀) for the scale's initial period control.
    Rho(usize),
    /// Uniform [0, 2π) phase.
    Phase,
}

/// One entry of the deterministic parameter layout.
#[derive(Debug, Clone)]
struct LayoutEntry {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

/// Initial period controls: ω = 1/3, 1/8, 1/16, then halving.
fn omega_init(scale: usize) -> f64 {
    match scale {
        0 => 1.0 / 3.0,
        1 => 1.0 / 8.0,
        s => 1.0 / (16.0 * (1u64 << (s - 2)) as f64),
    }
}

fn layout(dims: &ModelDims, variant: Variant) -> Vec<LayoutEntry> {
    let mut out = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, init: Init| {
        out.push(LayoutEntry {
            name,
            rows,
            cols,
            init,
        })
    };
    let d_m = dims.d_m;

    if !matches!(variant, Variant::FixedPatch { .. }) {
        for s in 0..dims.scales {
            push(format!("mask.{s}.rho"), 1, 1, Init::Rho(s));
            push(format!("mask.{s}.phi"), 1, 1, Init::Phase);
        }
    }

    push("embed.kernel".into(), 3, d_m, Init::FanIn);
    for (rows, field) in TABLE_ROWS.iter().zip(["hour", "weekday", "day", "month"]) {
        push(format!("embed.{field}"), *rows, d_m, Init::Zero);
    }

    let qk_rows = if variant == Variant::LinearMap {
        d_m
    } else {
        dims.bands() * d_m
    };
    for s in 0..dims.scales {
        push(format!("spectral.{s}.wq"), qk_rows, d_m, Init::FanIn);
        push(format!("spectral.{s}.wk"), qk_rows, d_m, Init::FanIn);
        push(format!("spectral.{s}.wv"), d_m, d_m, Init::FanIn);
        push(format!("spectral.{s}.wo"), d_m, d_m, Init::FanIn);
    }

    let shapes = dims.fusion_shapes();
    if variant == Variant::LinearTail {
        push("tail.w".into(), dims.scales * d_m, dims.d_k, Init::FanIn);
    } else {
        for i in 0..dims.e_layers {
            let in_cols = shapes.in_cols(i);
            push(format!("fusion.{i}.wq"), in_cols, dims.d_k, Init::FanIn);
            push(format!("fusion.{i}.wk"), in_cols, dims.d_k, Init::FanIn);
            push(format!("fusion.{i}.wv"), in_cols, dims.d_k, Init::FanIn);
            push(format!("fusion.{i}.ln1_gamma"), 1, dims.d_k, Init::One);
            push(format!("fusion.{i}.ln1_beta"), 1, dims.d_k, Init::Zero);
            push(format!("fusion.{i}.ffn_w1"), dims.d_k, dims.d_ff, Init::FanIn);
            push(format!("fusion.{i}.ffn_b1"), 1, dims.d_ff, Init::Zero);
            push(format!("fusion.{i}.ffn_w2"), dims.d_ff, dims.d_k, Init::FanIn);
            push(format!("fusion.{i}.ffn_b2"), 1, dims.d_k, Init::Zero);
            push(format!("fusion.{i}.ln2_gamma"), 1, dims.d_k, Init::One);
            push(format!("fusion.{i}.ln2_beta"), 1, dims.d_k, Init::Zero);
        }
    }

    push("head.w".into(), dims.l * dims.d_k, dims.horizon, Init::FanIn);
    push("head.b".into(), 1, dims.horizon, Init::Zero);
    out
}

/// Total trainable parameter count for a configuration — a pure function of
/// the dimensions and variant.
pub fn param_count(dims: &ModelDims, variant: Variant) -> usize {
    layout(dims, variant).iter().map(|e| e.rows * e.cols).sum()
}

/// Whether the forward pass uses the hard binarized mask or the relaxed
/// (soft-weighted) surrogate. Training and inference use `Hard`; `Relaxed`
/// exists to validate the straight-through gradients against a
/// differentiable objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Hard,
    Relaxed,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Forecast in the same space as the input window (the globally
    /// normalized series space when the data were z-scored).
    pub pred: Vec<f64>,
    /// Forecast in the window's instance-normalized space (before the
    /// inverse shift); useful for invariance checks.
    pub pred_window: Vec<f64>,
    /// Per-scale masks used (fixed tiling for the FP variant).
    pub masks: Vec<PatchMask>,
    /// Spectral transform invocations during this pass.
    pub band_dft_calls: u64,
}

/// A concrete model: dimensions, variant, and named parameter tensors in a
/// deterministic order.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub dims: ModelDims,
    pub variant: Variant,
    pub seed: u64,
    pub params: Vec<Tensor>,
    pub names: Vec<String>,
    /// Global z-score of the training series, recorded for checkpoints so a
    /// loaded model can map forecasts back to original counts.
    pub data_norm: Option<Norm>,
    index: HashMap<String, usize>,
}

impl ModelState {
    /// Builds and initializes a model. Weights use fan-in-scaled uniform
    /// draws from per-parameter named substreams of `seed`; biases and
    /// calendar tables start at zero, normalization gains at one, mask
    /// periods at ω ∈ {1/3, 1/8, 1/16, …} and phases uniform in [0, 2π).
    pub fn init(dims: ModelDims, variant: Variant, seed: u64) -> Result<ModelState> {
        dims.validate()?;
        if let Variant::FixedPatch { patch_len } = variant {
            if patch_len == 0 || patch_len > dims.l {
                return Err(FcError::Config(format!(
                    "fixed patch length must be in 1..={}, got {patch_len}",
                    dims.l
                )));
            }
        }
        use rand::Rng;
        let entries = layout(&dims, variant);
        let mut params = Vec::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        for e in &entries {
            let t = match e.init {
                Init::Zero => Tensor::zeros(e.rows, e.cols),
                Init::One => Tensor::from_fn(e.rows, e.cols, |_, _| 1.0),
                Init::Rho(s) => Tensor::from_vec(1, 1, vec![omega_init(s).ln()]),
                Init::Phase => {
                    let mut rng = stream(seed, &format!("init.{}", e.name));
                    Tensor::from_vec(1, 1, vec![rng.gen_range(0.0..2.0 * std::f64::consts::PI)])
                }
                Init::FanIn => {
                    let mut rng = stream(seed, &format!("init.{}", e.name));
                    let bound = (1.0 / e.rows as f64).sqrt();
                    Tensor::from_fn(e.rows, e.cols, |_, _| rng.gen_range(-bound..bound))
                }
            };
            params.push(t.with_grad());
            names.push(e.name.clone());
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(ModelState {
            dims,
            variant,
            seed,
            params,
            names,
            data_norm: None,
            index,
        })
    }

    /// Rebuilds the name→slot index (used after deserialization).
    pub fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    /// Parameter slot by name; panics on unknown names (layout is fixed).
    pub fn slot_of(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    fn node(&self, g: &mut GradGraph, cache: &mut HashMap<usize, NodeId>, name: &str) -> NodeId {
        let slot = self.slot_of(name);
        *cache
            .entry(slot)
            .or_insert_with(|| g.leaf_param(slot, &self.params[slot]))
    }

    /// Builds the forward computation in `g` for one window, returning the
    /// forecast node (1×n, input-window space) and the per-scale masks.
    pub fn forward_nodes(
        &self,
        g: &mut GradGraph,
        history: &[f64],
        calendar: &[CalendarFeatures],
        mode: MaskMode,
    ) -> Result<(NodeId, Vec<PatchMask>)> {
        let dims = &self.dims;
        if history.len() != dims.l {
            return Err(FcError::Shape(format!(
                "forward: window has {} steps but the model expects {}",
                history.len(),
                dims.l
            )));
        }
        if calendar.len() != dims.l {
            return Err(FcError::Shape(format!(
                "forward: {} calendar records for {} steps",
                calendar.len(),
                dims.l
            )));
        }
        let idx = calendar_indices(calendar)
            .map_err(|e| FcError::Data(format!("forward/embedding: {e}")))?;

        let (x_norm, i_mean, i_std) = instance_norm(history);
        let x = g.leaf_const(Tensor::from_vec(dims.l, 1, x_norm));
        let pos = g.leaf_const(positional_encoding(dims.l, dims.d_m));
        let mut cache: HashMap<usize, NodeId> = HashMap::new();

        let kernel = self.node(g, &mut cache, "embed.kernel");
        let tables = [
            self.node(g, &mut cache, "embed.hour"),
            self.node(g, &mut cache, "embed.weekday"),
            self.node(g, &mut cache, "embed.day"),
            self.node(g, &mut cache, "embed.month"),
        ];

        let mut masks = Vec::with_capacity(dims.scales);
        let mut scale_outputs = Vec::with_capacity(dims.scales);
        for s in 0..dims.scales {
            let masked = match self.variant {
                Variant::FixedPatch { patch_len } => {
                    masks.push(fixed_tiling_mask(dims.l, patch_len));
                    x
                }
                _ => {
                    let rho = self.node(g, &mut cache, &format!("mask.{s}.rho"));
                    let phi = self.node(g, &mut cache, &format!("mask.{s}.phi"));
                    let soft = g.window_soft(rho, phi, dims.l);
                    let mask = binarize(g.value(soft).data.clone(), dims.threshold_b);
                    let hard = mask.hard.clone();
                    masks.push(mask);
                    g.ste_mask(x, soft, hard, mode == MaskMode::Relaxed)
                }
            };
            let e = hybrid_embed(g, masked, kernel, tables, pos, &idx);
            let feats = if self.variant == Variant::LinearMap {
                e
            } else {
                g.band_decompose(e)
            };
            let wq = self.node(g, &mut cache, &format!("spectral.{s}.wq"));
            let wk = self.node(g, &mut cache, &format!("spectral.{s}.wk"));
            let wv = self.node(g, &mut cache, &format!("spectral.{s}.wv"));
            let wo = self.node(g, &mut cache, &format!("spectral.{s}.wo"));
            scale_outputs.push(frequency_attention(g, e, feats, wq, wk, wv, wo));
        }

        let fused_in = g.concat_cols(&scale_outputs);
        let fused = if self.variant == Variant::LinearTail {
            let tail = self.node(g, &mut cache, "tail.w");
            g.matmul(fused_in, tail)
        } else {
            let mut cur = fused_in;
            for i in 0..dims.e_layers {
                let block = FusionBlockNodes {
                    wq: self.node(g, &mut cache, &format!("fusion.{i}.wq")),
                    wk: self.node(g, &mut cache, &format!("fusion.{i}.wk")),
                    wv: self.node(g, &mut cache, &format!("fusion.{i}.wv")),
                    ln1_gamma: self.node(g, &mut cache, &format!("fusion.{i}.ln1_gamma")),
                    ln1_beta: self.node(g, &mut cache, &format!("fusion.{i}.ln1_beta")),
                    ffn_w1: self.node(g, &mut cache, &format!("fusion.{i}.ffn_w1")),
                    ffn_b1: self.node(g, &mut cache, &format!("fusion.{i}.ffn_b1")),
                    ffn_w2: self.node(g, &mut cache, &format!("fusion.{i}.ffn_w2")),
                    ffn_b2: self.node(g, &mut cache, &format!("fusion.{i}.ffn_b2")),
                    ln2_gamma: self.node(g, &mut cache, &format!("fusion.{i}.ln2_gamma")),
                    ln2_beta: self.node(g, &mut cache, &format!("fusion.{i}.ln2_beta")),
                };
                cur = fusion_block(g, cur, &block, dims.heads);
            }
            cur
        };

        let head_w = self.node(g, &mut cache, "head.w");
        let head_b = self.node(g, &mut cache, "head.b");
        let y = project_head(g, fused, head_w, head_b);
        let pred = g.scale_shift(y, i_std, i_mean);
        Ok((pred, masks))
    }

    /// The patch masks implied by the current parameters, one per scale,
    /// computed exactly as the forward pass computes them.
    pub fn current_masks(&self) -> Vec<PatchMask> {
        let dims = self.dims;
        (0..dims.scales)
            .map(|s| match self.variant {
                Variant::FixedPatch { patch_len } => fixed_tiling_mask(dims.l, patch_len),
                _ => {
                    let mut g = GradGraph::new();
                    let mut cache: HashMap<usize, NodeId> = HashMap::new();
                    let rho = self.node(&mut g, &mut cache, &format!("mask.{s}.rho"));
                    let phi = self.node(&mut g, &mut cache, &format!("mask.{s}.phi"));
                    let soft = g.window_soft(rho, phi, dims.l);
                    binarize(g.value(soft).data.clone(), dims.threshold_b)
                }
            })
            .collect()
    }

    /// Runs one forward pass and materializes the outputs.
    pub fn forward(
        &self,
        history: &[f64],
        calendar: &[CalendarFeatures],
        mode: MaskMode,
    ) -> Result<ForwardOutput> {
        let mut g = GradGraph::new();
        let (pred, masks) = self.forward_nodes(&mut g, history, calendar, mode)?;
        let pred_t = g.value(pred);
        let out = ForwardOutput {
            pred: pred_t.data.clone(),
            pred_window: {
                // pred = y·std + mean; recover y from the recorded stats.
                let (_, i_mean, i_std) = instance_norm(history);
                pred_t.data.iter().map(|p| (p - i_mean) / i_std).collect()
            },
            masks,
            band_dft_calls: g.band_dft_calls,
        };
        if out.pred.iter().any(|v| !v.is_finite()) {
            return Err(FcError::Numeric(
                "forward produced a non-finite forecast".into(),
            ));
        }
        Ok(out)
    }

    /// Builds the forward pass plus the mean-squared-error loss against
    /// `target` (same space as the input window).
    pub fn loss_graph(
        &self,
        history: &[f64],
        calendar: &[CalendarFeatures],
        target: &[f64],
        mode: MaskMode,
    ) -> Result<(GradGraph, NodeId)> {
        if target.len() != self.dims.horizon {
            return Err(FcError::Shape(format!(
                "loss: target has {} steps but the model forecasts {}",
                target.len(),
                self.dims.horizon
            )));
        }
        let mut g = GradGraph::new();
        let (pred, _) = self.forward_nodes(&mut g, history, calendar, mode)?;
        let loss = g.mse_loss(pred, target);
        Ok((g, loss))
    }
}

/// The FP variant's mask: every position selected, runs reporting the fixed
/// non-overlapping tiling (final tile may be shorter).
fn fixed_tiling_mask(l: usize, patch_len: usize) -> PatchMask {
    let mut runs = Vec::new();
    let mut off = 0;
    while off < l {
        let len = patch_len.min(l - off);
        runs.push((off, len));
        off += len;
    }
    PatchMask {
        soft: vec![1.0; l],
        hard: vec![1.0; l],
        runs,
    }
}
