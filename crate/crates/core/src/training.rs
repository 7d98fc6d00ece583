//! Mini-batch training with an adaptive-moment optimizer, early stopping on
//! validation loss, and bitwise-reproducible batch order for a fixed seed.
//!
//! The loss is always computed in the normalized space the windows live in;
//! converting predictions back to original units happens in [`evaluate`] so
//! that metric computation downstream sees real counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataflow::{Norm, WindowSample};
use crate::error::{FcError, Result};
use crate::model::{MaskMode, ModelState};
use crate::numerics::{ParamGrads, Tensor};

/// First-moment decay of the optimizer.
pub const BETA1: f64 = 0.9;
/// Second-moment decay of the optimizer.
pub const BETA2: f64 = 0.999;
/// Denominator guard of the optimizer.
pub const ADAM_EPS: f64 = 1e-8;

/// Validation must improve by more than this (absolute) to reset patience.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Samples per parallel work unit. Gradients are reduced chunk-by-chunk in
/// fixed index order, so the result is independent of thread scheduling.
const GRAD_CHUNK: usize = 8;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Seed for the epoch shuffle order (independent of the model-init seed).
    pub seed: u64,
    /// When false (the default) the history CSV reports 0.000 seconds per
    /// epoch so that repeated runs produce byte-identical artifacts.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            patience: 40,
            max_epochs: 200,
            seed: 0,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(FcError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(FcError::Config(
                "batch_size, patience and max_epochs must all be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(FcError::Config(format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// One epoch's record in the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch (normalized space).
    pub train_loss: f64,
    /// Mean per-sample validation loss after the epoch (normalized space).
    pub val_loss: f64,
    /// Wallclock seconds for the epoch; 0.0 unless timing was requested.
    pub seconds: f64,
}

/// Full account of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose snapshot is returned (1-based; minimum recorded val loss).
    pub best_epoch: usize,
    /// `"patience"` or `"max_epochs"`.
    pub stopping_reason: String,
}

impl TrainHistory {
    /// Renders the per-epoch log as `epoch,train_loss,val_loss,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.seconds
            ));
        }
        out
    }
}

/// Adaptive-moment optimizer state (β₁=0.9, β₂=0.999, ε=1e-8, bias-corrected).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Adam {
        Adam {
            lr,
            step_count: 0,
            m: params.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    /// Applies one update in place: θ ← θ − lr · m̂ / (√v̂ + ε).
    pub fn step(&mut self, params: &mut [Tensor], grads: &ParamGrads) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (idx, p) in params.iter_mut().enumerate() {
            let g = grads.slot(idx);
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.data.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Sum of per-sample losses plus summed gradients for `idx` (a batch of
/// dataset indices). Work is split into fixed chunks; each chunk accumulates
/// sequentially and chunks are reduced in order, so the result is bitwise
/// stable under any thread count.
fn batch_backward(
    model: &ModelState,
    set: &[WindowSample],
    idx: &[usize],
) -> Result<(f64, ParamGrads)> {
    let chunks: Vec<(f64, ParamGrads)> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| -> Result<(f64, ParamGrads)> {
            let mut grads = ParamGrads::like(&model.params);
            let mut loss_sum = 0.0;
            for &i in chunk {
                let s = &set[i];
                let (mut g, loss) = model.loss_graph(
                    &s.history,
                    &s.history_calendar,
                    &s.target,
                    MaskMode::Hard,
                )?;
                loss_sum += g.scalar(loss);
                g.backward(loss, &mut grads)?;
            }
            Ok((loss_sum, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ParamGrads::like(&model.params);
    let mut loss_sum = 0.0;
    for (l, g) in &chunks {
        loss_sum += l;
        total.add_from(g);
    }
    Ok((loss_sum, total))
}

/// Mean per-sample loss of `model` on `set` without touching parameters.
pub fn mean_loss(model: &ModelState, set: &[WindowSample]) -> Result<f64> {
    if set.is_empty() {
        return Err(FcError::Data("loss over an empty dataset".into()));
    }
    let mut sum = 0.0;
    for s in set {
        let (g, loss) =
            model.loss_graph(&s.history, &s.history_calendar, &s.target, MaskMode::Hard)?;
        sum += g.scalar(loss);
    }
    Ok(sum / set.len() as f64)
}

/// Trains `model` on `train_set`, monitoring `val_set`, and returns the
/// snapshot with the lowest validation loss plus the per-epoch history.
pub fn train(
    model: &ModelState,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(FcError::Data(
            "training requires nonempty train and validation sets".into(),
        ));
    }
    for (label, set) in [("train", train_set), ("val", val_set)] {
        for s in set {
            if s.history.len() != model.dims.l || s.target.len() != model.dims.horizon {
                return Err(FcError::Shape(format!(
                    "{label} window at anchor {} has history {} / target {} but the model \
                     expects {} / {}",
                    s.anchor,
                    s.history.len(),
                    s.target.len(),
                    model.dims.l,
                    model.dims.horizon
                )));
            }
        }
    }

    let mut state = model.clone();
    let mut opt = Adam::new(cfg.learning_rate, &state.params);
    let mut best_state = state.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stall = 0usize;
    let mut epochs = Vec::new();
    let mut stopping_reason = "max_epochs".to_string();

    for epoch in 1..=cfg.max_epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::stream_indexed(cfg.seed, "shuffle", epoch as u64);
            order.shuffle(&mut rng);
        }

        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss_sum, mut grads) = batch_backward(&state, train_set, batch)?;
            let batch_loss = loss_sum / batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(FcError::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {batch_idx} \
                     (max |grad| = {:.3e})",
                    grads.max_abs()
                )));
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut state.params, &grads);
            epoch_loss_sum += loss_sum;
        }

        let train_loss = epoch_loss_sum / train_set.len() as f64;
        let val_loss = mean_loss(&state, val_set)?;
        if !val_loss.is_finite() {
            return Err(FcError::Numeric(format!(
                "non-finite validation loss after epoch {epoch}"
            )));
        }
        let seconds = if cfg.timing {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds,
        });

        if best_val - val_loss > IMPROVEMENT_EPS {
            best_val = val_loss;
            best_state = state.clone();
            best_epoch = epoch;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                stopping_reason = "patience".to_string();
                break;
            }
        }
    }

    Ok((
        best_state,
        TrainHistory {
            epochs,
            best_epoch,
            stopping_reason,
        },
    ))
}

/// Evaluation artifact: normalized-space loss plus original-unit predictions
/// and targets for metric computation downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    /// Mean per-sample MSE in the normalized space the model trains in.
    pub mse_z: f64,
    /// Per-window forecasts mapped back to original units.
    pub predictions: Vec<Vec<f64>>,
    /// Per-window ground truth in original units.
    pub targets: Vec<Vec<f64>>,
}

/// Runs the model over `set` without mutating it. Predictions and targets
/// are converted back to original units via the normalization stored with
/// the model; a model without one is taken to operate on raw units already.
pub fn evaluate(model: &ModelState, set: &[WindowSample]) -> Result<EvalOutput> {
    if set.is_empty() {
        return Err(FcError::Data("evaluate on an empty dataset".into()));
    }
    let norm = model.data_norm.unwrap_or(Norm {
        mean: 0.0,
        std: 1.0,
    });
    let mut sq_sum = 0.0;
    let mut predictions = Vec::with_capacity(set.len());
    let mut targets = Vec::with_capacity(set.len());
    for s in set {
        let out = model.forward(&s.history, &s.history_calendar, MaskMode::Hard)?;
        if out.pred.len() != s.target.len() {
            return Err(FcError::Shape(format!(
                "model forecasts {} steps but window at anchor {} has {}",
                out.pred.len(),
                s.anchor,
                s.target.len()
            )));
        }
        for (p, t) in out.pred.iter().zip(&s.target) {
            let d = p - t;
            sq_sum += d * d;
        }
        predictions.push(out.pred.iter().map(|&p| norm.invert(p)).collect());
        targets.push(s.target.iter().map(|&t| norm.invert(t)).collect());
    }
    Ok(EvalOutput {
        mse_z: sq_sum / (set.len() * model.dims.horizon) as f64,
        predictions,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{fixture, micro_dims};
    use crate::model::{ModelDims, Variant};

    fn tensor_of(v: f64, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, vec![v; rows * cols])
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![tensor_of(0.7, 2, 3), tensor_of(-1.2, 1, 4)];
        let before: Vec<Vec<f64>> = params.iter().map(|t| t.data.clone()).collect();
        let grads = ParamGrads::like(&params);
        let mut opt = Adam::new(0.01, &params);
        for _ in 0..3 {
            opt.step(&mut params, &grads);
        }
        for (t, b) in params.iter().zip(&before) {
            assert_eq!(&t.data, b);
        }
    }

    #[test]
    fn first_step_matches_hand_computed_update() {
        // g = 1 from zero moments: m̂ = v̂ = 1 exactly, so Δ = lr/(1+ε).
        let mut params = vec![tensor_of(0.0, 1, 1)];
        let mut grads = ParamGrads::like(&params);
        grads.slot_mut(0)[0] = 1.0;
        let mut opt = Adam::new(0.001, &params);
        opt.step(&mut params, &grads);
        assert!((params[0].data[0] + 0.001).abs() < 1e-9, "{}", params[0].data[0]);
    }

    #[test]
    fn constant_gradient_step_size_approaches_learning_rate() {
        let lr = 0.004;
        let mut params = vec![tensor_of(0.0, 1, 1)];
        let mut grads = ParamGrads::like(&params);
        grads.slot_mut(0)[0] = 0.37;
        let mut opt = Adam::new(lr, &params);
        let mut prev = params[0].data[0];
        let mut last_step = 0.0;
        for _ in 0..4000 {
            opt.step(&mut params, &grads);
            last_step = (params[0].data[0] - prev).abs();
            prev = params[0].data[0];
        }
        assert!(
            (last_step - lr).abs() / lr < 0.05,
            "step {last_step} vs lr {lr}"
        );
    }

    fn micro_sets(dims: &ModelDims, count: usize, zero_targets: bool) -> Vec<WindowSample> {
        let (base_h, cal) = fixture(dims.l);
        (0..count)
            .map(|i| {
                let shift = i as f64 * 0.17;
                let history: Vec<f64> =
                    base_h.iter().map(|v| v + (shift * 1.9).sin() * 0.6).collect();
                let target: Vec<f64> = if zero_targets {
                    vec![0.0; dims.horizon]
                } else {
                    (0..dims.horizon)
                        .map(|j| ((i + j) as f64 * 0.43).cos() * 0.8)
                        .collect()
                };
                WindowSample {
                    anchor: dims.l + i,
                    history,
                    target,
                    history_calendar: cal.clone(),
                }
            })
            .collect()
    }

    fn tiny_dims() -> ModelDims {
        ModelDims {
            e_layers: 1,
            d_ff: 16,
            ..micro_dims()
        }
    }

    #[test]
    fn loss_decreases_on_zero_target_dataset() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 11).unwrap();
        let set = micro_sets(&dims, 12, true);
        let cfg = TrainConfig {
            learning_rate: 0.0002,
            batch_size: 6,
            patience: 6,
            max_epochs: 6,
            seed: 5,
            timing: false,
        };
        let (_, hist) = train(&model, &set, &set, &cfg).unwrap();
        assert!(hist.epochs.len() >= 5);
        for w in hist.epochs.windows(2).take(4) {
            assert!(
                w[1].train_loss <= w[0].train_loss + 1e-12,
                "loss rose: {} -> {}",
                w[0].train_loss,
                w[1].train_loss
            );
        }
        assert!(hist.epochs.last().unwrap().train_loss < hist.epochs[0].train_loss);
    }

    #[test]
    fn patience_one_stops_on_first_stall_with_reason() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 2).unwrap();
        let set = micro_sets(&dims, 10, false);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 5,
            patience: 1,
            max_epochs: 80,
            seed: 9,
            timing: false,
        };
        let (_, hist) = train(&model, &set, &set, &cfg).unwrap();
        assert_eq!(hist.stopping_reason, "patience");
        assert!(hist.epochs.len() < 80, "never stalled in {} epochs", hist.epochs.len());
        // The stall epoch is recorded but the best epoch precedes it.
        assert!(hist.best_epoch < hist.epochs.len());
    }

    #[test]
    fn best_epoch_has_minimum_validation_loss_and_is_returned() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 4).unwrap();
        let set = micro_sets(&dims, 10, false);
        let cfg = TrainConfig {
            learning_rate: 0.03,
            batch_size: 5,
            patience: 3,
            max_epochs: 12,
            seed: 1,
            timing: false,
        };
        let (best, hist) = train(&model, &set, &set, &cfg).unwrap();
        let min_val = hist
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        let best_rec = hist
            .epochs
            .iter()
            .find(|e| e.epoch == hist.best_epoch)
            .unwrap();
        assert_eq!(best_rec.val_loss, min_val);
        // The returned snapshot reproduces the recorded best loss exactly.
        let replay = mean_loss(&best, &set).unwrap();
        assert_eq!(replay, min_val);
    }

    #[test]
    fn fixed_seed_training_is_bitwise_reproducible() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 6).unwrap();
        let set = micro_sets(&dims, 9, false);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            patience: 3,
            max_epochs: 3,
            seed: 21,
            timing: false,
        };
        let (a, ha) = train(&model, &set, &set, &cfg).unwrap();
        let (b, hb) = train(&model, &set, &set, &cfg).unwrap();
        assert_eq!(ha, hb);
        for (ta, tb) in a.params.iter().zip(&b.params) {
            assert_eq!(ta.data, tb.data);
        }
        assert_eq!(ha.to_csv(), hb.to_csv());
        // With timing off the seconds column is frozen at 0.000.
        assert!(ha.to_csv().lines().skip(1).all(|l| l.ends_with(",0.000")));
    }

    #[test]
    fn different_shuffle_seeds_diverge() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 6).unwrap();
        let set = micro_sets(&dims, 9, false);
        let mut cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            patience: 3,
            max_epochs: 3,
            seed: 21,
            timing: false,
        };
        let (_, ha) = train(&model, &set, &set, &cfg).unwrap();
        cfg.seed = 22;
        let (_, hb) = train(&model, &set, &set, &cfg).unwrap();
        assert_ne!(ha, hb);
    }

    #[test]
    fn evaluate_constant_prediction_yields_target_variance() {
        let dims = tiny_dims();
        let mut model = ModelState::init(dims, Variant::Full, 8).unwrap();
        // All windows share one history so the instance statistics are fixed.
        let (h, cal) = fixture(dims.l);
        let targets: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..dims.horizon).map(|j| (i * 2 + j) as f64 * 0.3 - 1.0).collect())
            .collect();
        let flat: Vec<f64> = targets.iter().flatten().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / flat.len() as f64;
        let (_, i_mean, i_std) = crate::deformable::instance_norm(&h);
        let wi = model.slot_of("head.w");
        let rows = model.params[wi].rows;
        let cols = model.params[wi].cols;
        model.params[wi] = Tensor::zeros(rows, cols).with_grad();
        let bi = model.slot_of("head.b");
        model.params[bi] =
            Tensor::from_vec(1, dims.horizon, vec![(mean - i_mean) / i_std; dims.horizon])
                .with_grad();
        let set: Vec<WindowSample> = targets
            .into_iter()
            .enumerate()
            .map(|(i, target)| WindowSample {
                anchor: dims.l + i,
                history: h.clone(),
                target,
                history_calendar: cal.clone(),
            })
            .collect();
        let out = evaluate(&model, &set).unwrap();
        assert!((out.mse_z - var).abs() < 1e-9, "{} vs {var}", out.mse_z);
        // No normalization stored: predictions are already in original units.
        for p in &out.predictions {
            for v in p {
                assert!((v - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn evaluate_is_pure_and_uncached() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 13).unwrap();
        let set_a = micro_sets(&dims, 6, false);
        let set_b = micro_sets(&dims, 6, true);
        let a1 = evaluate(&model, &set_a).unwrap();
        let b = evaluate(&model, &set_b).unwrap();
        let a2 = evaluate(&model, &set_a).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1.mse_z, b.mse_z);
    }

    #[test]
    fn evaluate_applies_stored_normalization_to_outputs() {
        let dims = tiny_dims();
        let mut model = ModelState::init(dims, Variant::Full, 3).unwrap();
        let set = micro_sets(&dims, 4, false);
        let plain = evaluate(&model, &set).unwrap();
        model.data_norm = Some(Norm {
            mean: 50.0,
            std: 4.0,
        });
        let scaled = evaluate(&model, &set).unwrap();
        // Loss is unchanged (normalized space); outputs are mapped to counts.
        assert_eq!(plain.mse_z, scaled.mse_z);
        for (p, s) in plain.predictions.iter().zip(&scaled.predictions) {
            for (a, b) in p.iter().zip(s) {
                assert!((b - (a * 4.0 + 50.0)).abs() < 1e-12);
            }
        }
        for (t, s) in plain.targets.iter().zip(&scaled.targets) {
            for (a, b) in t.iter().zip(s) {
                assert!((b - (a * 4.0 + 50.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.patience = 300;
        assert!(matches!(cfg.validate(), Err(FcError::Config(_))));
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.learning_rate = -0.1;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn shape_mismatch_is_reported_before_training() {
        let dims = tiny_dims();
        let model = ModelState::init(dims, Variant::Full, 1).unwrap();
        let mut set = micro_sets(&dims, 4, false);
        set[2].history.pop();
        let cfg = TrainConfig {
            max_epochs: 1,
            patience: 1,
            ..TrainConfig::default()
        };
        let err = train(&model, &set, &set, &cfg).unwrap_err();
        assert!(matches!(err, FcError::Shape(_)), "{err}");
    }
}
