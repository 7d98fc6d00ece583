//! Cross-scale fusion: feature-wise concatenation of per-scale outputs,
//! stacked multi-head self-attention blocks with residual connections,
//! post-block layer normalization and GELU feed-forward layers, and the
//! flattening affine head that maps the fused sequence to the forecast.

use crate::error::{FcError, Result};
use crate::numerics::{GradGraph, NodeId};

/// Structural hyperparameters of the fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FusionShapes {
    /// Scale count S; block input width is S·d_m.
    pub scales: usize,
    pub d_m: usize,
    /// Attention width d_k (heads concatenate back to this).
    pub d_k: usize,
    /// Head count H; must divide d_k.
    pub heads: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Number of stacked attention blocks.
    pub e_layers: usize,
}

impl FusionShapes {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.d_m == 0 || self.d_k == 0 || self.d_ff == 0 || self.e_layers == 0
        {
            return Err(FcError::Config(format!(
                "fusion dimensions must be positive: {self:?}"
            )));
        }
        if self.heads == 0 || self.d_k % self.heads != 0 {
            return Err(FcError::Config(format!(
                "head count {} must divide attention width {}",
                self.heads, self.d_k
            )));
        }
        Ok(())
    }

    /// Block input width: S·d_m for the first block, d_k afterwards.
    pub fn in_cols(&self, layer: usize) -> usize {
        if layer == 0 {
            self.scales * self.d_m
        } else {
            self.d_k
        }
    }
}

/// Trainable node ids for one fusion block.
#[derive(Debug, Clone, Copy)]
pub struct FusionBlockNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub ln1_gamma: NodeId,
    pub ln1_beta: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub ln2_gamma: NodeId,
    pub ln2_beta: NodeId,
}

/// Multi-head scaled-dot-product self-attention: projects `x` to Q/K/V,
/// splits the width into `heads` equal slices, attends per head, and
/// concatenates the head outputs (no extra output projection).
pub fn multi_head_attention(
    g: &mut GradGraph,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    heads: usize,
) -> NodeId {
    let d_k = g.value(wq).cols;
    assert!(heads > 0 && d_k % heads == 0, "head count must divide d_k");
    let dh = d_k / heads;
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let scores = g.matmul_nt(qh, kh);
        let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.row_softmax(scaled);
        outs.push(g.matmul(attn, vh));
    }
    g.concat_cols(&outs)
}

/// One fusion block: multi-head attention with a residual connection (when
/// the input width already equals d_k) followed by layer normalization, then
/// a GELU feed-forward with its own residual and normalization.
pub fn fusion_block(
    g: &mut GradGraph,
    x: NodeId,
    nodes: &FusionBlockNodes,
    heads: usize,
) -> NodeId {
    let attn = multi_head_attention(g, x, nodes.wq, nodes.wk, nodes.wv, heads);
    let mixed = if g.value(x).cols == g.value(attn).cols {
        g.add(x, attn)
    } else {
        // First block with d_k ≠ S·d_m: widths differ, skip the residual.
        attn
    };
    let normed = g.layer_norm(mixed, nodes.ln1_gamma, nodes.ln1_beta);

    let h1 = g.matmul(normed, nodes.ffn_w1);
    let h1b = g.add_row(h1, nodes.ffn_b1);
    let act = g.gelu(h1b);
    let h2 = g.matmul(act, nodes.ffn_w2);
    let h2b = g.add_row(h2, nodes.ffn_b2);
    let res = g.add(normed, h2b);
    g.layer_norm(res, nodes.ln2_gamma, nodes.ln2_beta)
}

/// Forecast head: flattens the L×d_k fused sequence row-major into a single
/// row and applies an affine map to `n` outputs.
pub fn project_head(g: &mut GradGraph, z: NodeId, w_flat: NodeId, bias: NodeId) -> NodeId {
    let (l, d_k) = {
        let t = g.value(z);
        (t.rows, t.cols)
    };
    let w = g.value(w_flat);
    assert_eq!(w.rows, l * d_k, "head weight rows must equal L·d_k");
    let flat = g.reshape(z, 1, l * d_k);
    let y = g.matmul(flat, w_flat);
    g.add(y, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, ParamGrads, Tensor};
    use rand::{Rng, SeedableRng};

    fn random_tensor(rows: usize, cols: usize, seed: u64, scale: f64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
    }

    fn block_tensors(in_cols: usize, shapes: &FusionShapes, seed: u64) -> Vec<Tensor> {
        let (d_k, d_ff) = (shapes.d_k, shapes.d_ff);
        vec![
            random_tensor(in_cols, d_k, seed, 0.3),
            random_tensor(in_cols, d_k, seed + 1, 0.3),
            random_tensor(in_cols, d_k, seed + 2, 0.3),
            Tensor::from_fn(1, d_k, |_, _| 1.0),
            Tensor::zeros(1, d_k),
            random_tensor(d_k, d_ff, seed + 3, 0.3),
            Tensor::zeros(1, d_ff),
            random_tensor(d_ff, d_k, seed + 4, 0.3),
            Tensor::zeros(1, d_k),
            Tensor::from_fn(1, d_k, |_, _| 1.0),
            Tensor::zeros(1, d_k),
        ]
    }

    fn load_block(g: &mut GradGraph, tensors: &[Tensor], first_param: usize) -> FusionBlockNodes {
        let ids: Vec<NodeId> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.leaf_param(first_param + i, t))
            .collect();
        FusionBlockNodes {
            wq: ids[0],
            wk: ids[1],
            wv: ids[2],
            ln1_gamma: ids[3],
            ln1_beta: ids[4],
            ffn_w1: ids[5],
            ffn_b1: ids[6],
            ffn_w2: ids[7],
            ffn_b2: ids[8],
            ln2_gamma: ids[9],
            ln2_beta: ids[10],
        }
    }

    #[test]
    fn validation_rejects_bad_head_split() {
        let mut s = FusionShapes {
            scales: 3,
            d_m: 16,
            d_k: 48,
            heads: 8,
            d_ff: 64,
            e_layers: 2,
        };
        assert!(s.validate().is_ok());
        s.heads = 5;
        assert!(matches!(s.validate(), Err(FcError::Config(_))));
        s.heads = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_query_key_attention_averages_values() {
        let l = 6;
        let d = 8;
        let heads = 2;
        let x = random_tensor(l, d, 7, 1.0);
        let wv = random_tensor(d, d, 8, 0.5);
        let mut g = GradGraph::new();
        let xn = g.leaf_const(x.clone());
        let zq = g.leaf_const(Tensor::zeros(d, d));
        let zk = g.leaf_const(Tensor::zeros(d, d));
        let vn = g.leaf_const(wv.clone());
        let out = multi_head_attention(&mut g, xn, zq, zk, vn, heads);
        let v = x.matmul(&wv);
        let got = g.value(out);
        for t in 0..l {
            for c in 0..d {
                let mean: f64 = (0..l).map(|r| v.at(r, c)).sum::<f64>() / l as f64;
                assert!(
                    (got.at(t, c) - mean).abs() < 1e-10,
                    "row {t} col {c}: {} vs {mean}",
                    got.at(t, c)
                );
            }
        }
    }

    #[test]
    fn per_head_attention_is_right_stochastic() {
        let l = 9;
        let d = 12;
        let heads = 3;
        let dh = d / heads;
        let x = random_tensor(l, d, 17, 0.8);
        let wq = random_tensor(d, d, 18, 0.4);
        let wk = random_tensor(d, d, 19, 0.4);
        let mut g = GradGraph::new();
        let xn = g.leaf_const(x);
        let wqn = g.leaf_const(wq);
        let wkn = g.leaf_const(wk);
        let q = g.matmul(xn, wqn);
        let k = g.matmul(xn, wkn);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let s = g.matmul_nt(qh, kh);
            let sc = g.scale(s, 1.0 / (dh as f64).sqrt());
            let attn = g.row_softmax(sc);
            let a = g.value(attn);
            for t in 0..l {
                let row = a.row(t);
                assert!(row.iter().all(|p| *p >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_scale_concat_is_identity_into_attention() {
        // With S = 1 the fused input is exactly the single scale's matrix,
        // so the block equals plain multi-head self-attention on it.
        let shapes = FusionShapes {
            scales: 1,
            d_m: 8,
            d_k: 8,
            heads: 2,
            d_ff: 16,
            e_layers: 1,
        };
        shapes.validate().unwrap();
        let x = random_tensor(5, 8, 23, 0.9);
        let tensors = block_tensors(8, &shapes, 100);
        let mut g1 = GradGraph::new();
        let xa = g1.leaf_const(x.clone());
        let cat = g1.concat_cols(&[xa]);
        let b1 = load_block(&mut g1, &tensors, 0);
        let o1 = fusion_block(&mut g1, cat, &b1, shapes.heads);

        let mut g2 = GradGraph::new();
        let xb = g2.leaf_const(x);
        let b2 = load_block(&mut g2, &tensors, 0);
        let o2 = fusion_block(&mut g2, xb, &b2, shapes.heads);
        assert_eq!(g1.value(o1).data, g2.value(o2).data);
    }

    #[test]
    fn value_projection_gradient_matches_finite_differences() {
        let shapes = FusionShapes {
            scales: 2,
            d_m: 4,
            d_k: 8,
            heads: 2,
            d_ff: 12,
            e_layers: 1,
        };
        let l = 6;
        let in_cols = shapes.in_cols(0);
        let x = random_tensor(l, in_cols, 31, 0.8);
        let tensors = block_tensors(in_cols, &shapes, 200);
        let wv0 = tensors[2].clone();
        // A plain sum of the block output is constant (each normalized row
        // sums to Σβ), so weight the output to get a non-degenerate scalar.
        let weights = random_tensor(l, shapes.d_k, 205, 1.0);

        let eval = |wv: &Tensor, want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut t2 = tensors.clone();
            t2[2] = wv.clone();
            let mut g = GradGraph::new();
            let xn = g.leaf_const(x.clone());
            let block = load_block(&mut g, &t2, 0);
            let out = fusion_block(&mut g, xn, &block, shapes.heads);
            let wn = g.leaf_const(weights.clone());
            let weighted = g.mul(out, wn);
            let loss = g.sum_all(weighted);
            let val = g.scalar(loss);
            if !want_grad {
                return (val, None);
            }
            let mut sink = ParamGrads::like(&t2);
            g.backward(loss, &mut sink).unwrap();
            (val, Some(sink.slot(2).to_vec()))
        };
        let err = grad_check(
            |wv| eval(wv, false).0,
            |wv| eval(wv, true).1.unwrap(),
            &wv0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "fusion W_V gradient error {err}");
    }

    #[test]
    fn head_with_zero_weights_outputs_bias() {
        let mut g = GradGraph::new();
        let z = g.leaf_const(random_tensor(7, 4, 41, 1.0));
        let w = g.leaf_const(Tensor::zeros(28, 3));
        let b = g.leaf_const(Tensor::from_vec(1, 3, vec![2.5, 2.5, 2.5]));
        let y = project_head(&mut g, z, w, b);
        let v = g.value(y);
        assert_eq!((v.rows, v.cols), (1, 3));
        assert!(v.data.iter().all(|p| (*p - 2.5).abs() < 1e-15));
    }

    #[test]
    fn head_gradient_under_mse_matches_finite_differences() {
        let l = 5;
        let d_k = 4;
        let n = 3;
        let z = random_tensor(l, d_k, 51, 0.6);
        let w0 = random_tensor(l * d_k, n, 52, 0.2);
        let bias = random_tensor(1, n, 53, 0.1);
        let target = vec![0.4, -0.2, 0.9];

        let eval = |w: &Tensor, want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut g = GradGraph::new();
            let zn = g.leaf_const(z.clone());
            let wn = g.leaf_param(0, w);
            let bn = g.leaf_const(bias.clone());
            let y = project_head(&mut g, zn, wn, bn);
            let loss = g.mse_loss(y, &target);
            let val = g.scalar(loss);
            if !want_grad {
                return (val, None);
            }
            let mut sink = ParamGrads::like(std::slice::from_ref(w));
            g.backward(loss, &mut sink).unwrap();
            (val, Some(sink.slot(0).to_vec()))
        };
        let err = grad_check(
            |w| eval(w, false).0,
            |w| eval(w, true).1.unwrap(),
            &w0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "head gradient error {err}");
    }

    #[test]
    fn stacked_blocks_change_shape_only_at_entry() {
        let shapes = FusionShapes {
            scales: 3,
            d_m: 4,
            d_k: 12,
            heads: 4,
            d_ff: 16,
            e_layers: 3,
        };
        let l = 8;
        let mut g = GradGraph::new();
        let mut cur = g.leaf_const(random_tensor(l, shapes.in_cols(0), 61, 0.5));
        let mut first_param = 0;
        for layer in 0..shapes.e_layers {
            let tensors = block_tensors(shapes.in_cols(layer), &shapes, 300 + layer as u64);
            let block = load_block(&mut g, &tensors, first_param);
            first_param += tensors.len();
            cur = fusion_block(&mut g, cur, &block, shapes.heads);
            assert_eq!(g.value(cur).cols, shapes.d_k, "layer {layer} width");
            assert_eq!(g.value(cur).rows, l);
        }
        assert!(g.value(cur).data.iter().all(|v| v.is_finite()));
    }
}
