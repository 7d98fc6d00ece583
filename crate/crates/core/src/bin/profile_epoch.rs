//! Developer utility: breaks one benchmark-scale training step into phases
//! and prints where the time goes. Not part of the shipped workflow.

use std::time::Instant;

use flowcast::config::RunConfig;
use flowcast::dataflow::{generate_synthetic, make_windows, zscore_fit_apply, SplitOptions};
use flowcast::model::{MaskMode, ModelState};
use flowcast::numerics::ParamGrads;

fn main() {
    let cfg = RunConfig::default();
    let raw = generate_synthetic(&cfg.synth_with_seed()).unwrap();
    let normalized = zscore_fit_apply(&raw, cfg.train_fraction).unwrap();
    let splits = make_windows(
        &normalized,
        cfg.m,
        cfg.n,
        SplitOptions {
            fractions: (0.7, 0.1, 0.2),
            embargo: false,
        },
    )
    .unwrap();
    let model = ModelState::init(cfg.dims(), cfg.variant, cfg.seed).unwrap();
    let samples = &splits.train[..256.min(splits.train.len())];

    let t0 = Instant::now();
    for s in samples {
        let out = model
            .forward(&s.history, &s.history_calendar, MaskMode::Hard)
            .unwrap();
        std::hint::black_box(out.pred);
    }
    let fwd = t0.elapsed().as_secs_f64() / samples.len() as f64;

    let mut grads = ParamGrads::like(&model.params);
    let t0 = Instant::now();
    for s in samples {
        let (mut g, loss) = model
            .loss_graph(&s.history, &s.history_calendar, &s.target, MaskMode::Hard)
            .unwrap();
        std::hint::black_box(g.scalar(loss));
        g.backward(loss, &mut grads).unwrap();
    }
    let both = t0.elapsed().as_secs_f64() / samples.len() as f64;

    println!(
        "per sample: forward {:.3} ms, forward+backward {:.3} ms (backward ≈ {:.3} ms)",
        fwd * 1e3,
        both * 1e3,
        (both - fwd) * 1e3
    );
    println!(
        "epoch estimate at {} train windows: {:.1} s",
        splits.train.len(),
        both * splits.train.len() as f64
    );
}
