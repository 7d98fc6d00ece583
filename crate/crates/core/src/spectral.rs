//! Frequency-domain attention for one scale: band-component features from
//! the embedded sequence's half-spectrum, queries/keys formed in that
//! spectral feature space, values kept in the time domain, single-head
//! scaled-dot-product attention, and an output projection.

use crate::error::{FcError, Result};
use crate::numerics::{GradGraph, NodeId, Tensor};

/// Per-scale attention parameter shapes. Q/K projections read the full
/// band-feature matrix, so their row count is bound to one sequence length.
#[derive(Debug, Clone, Copy)]
pub struct SpectralShapes {
    pub len: usize,
    pub d_m: usize,
}

impl SpectralShapes {
    /// Number of half-spectrum bands, ⌊L/2⌋ + 1.
    pub fn bands(&self) -> usize {
        self.len / 2 + 1
    }

    /// Row count of the Q/K projections: (f+1)·d_m.
    pub fn qk_rows(&self) -> usize {
        self.bands() * self.d_m
    }

    /// Validates the four projection matrices for this shape.
    pub fn validate(&self, wq: &Tensor, wk: &Tensor, wv: &Tensor, wo: &Tensor) -> Result<()> {
        let need = [
            ("spectral W_Q", wq, self.qk_rows(), self.d_m),
            ("spectral W_K", wk, self.qk_rows(), self.d_m),
            ("spectral W_V", wv, self.d_m, self.d_m),
            ("spectral W_O", wo, self.d_m, self.d_m),
        ];
        for (name, t, rows, cols) in need {
            if t.rows != rows || t.cols != cols {
                return Err(FcError::Shape(format!(
                    "{name} must be {rows}×{cols}, got {}×{}",
                    t.rows, t.cols
                )));
            }
        }
        Ok(())
    }
}

/// Standalone band-feature computation (diagnostics and tests); forwards to
/// the graph implementation so there is a single source of truth.
pub fn frequency_features(e: &Tensor) -> Tensor {
    let mut g = GradGraph::new();
    let en = g.leaf_const(e.clone());
    let a = g.band_decompose(en);
    g.value(a).clone()
}

/// Builds the spectral attention block in the graph.
///
/// `Q = A·W_Q`, `K = A·W_K` (spectral space), `V = E·W_V` (time domain),
/// `Z = softmax(Q·Kᵀ/√d_m)·V`, output `Z·W_O`. No inverse transform is
/// needed because values never leave the time domain.
pub fn frequency_attention(
    g: &mut GradGraph,
    e: NodeId,
    a: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
) -> NodeId {
    let d_m = g.value(wq).cols;
    let q = g.matmul(a, wq);
    let k = g.matmul(a, wk);
    let v = g.matmul(e, wv);
    let scores = g.matmul_nt(q, k);
    let scaled = g.scale(scores, 1.0 / (d_m as f64).sqrt());
    let attn = g.row_softmax(scaled);
    let z = g.matmul(attn, v);
    g.matmul(z, wo)
}
