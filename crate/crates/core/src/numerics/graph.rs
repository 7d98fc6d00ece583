//! Tape-based reverse-mode differentiation.
//!
//! A [`GradGraph`] records every primitive operation of one forward pass in
//! execution order, computing values eagerly. [`GradGraph::backward`] then
//! replays the tape once in reverse, accumulating cotangents per node and
//! depositing leaf gradients into a [`ParamGrads`] sink indexed by parameter
//! id. Repeated backward calls accumulate into the sink; callers zero it
//! explicitly between optimizer steps.
//!
//! The operation set is exactly what the forecasting model needs: dense
//! products, row softmax, layer normalization, GELU, a circular width-3
//! convolution, calendar-table gathers, the per-frequency band decomposition,
//! the parameterized window mask, and its straight-through binarization.

use super::dense::{mm_acc, mm_nt_acc, mm_tn_acc, Tensor};
use super::dft::{dft_real, plan};
use crate::error::{FcError, Result};

/// Shared epsilon for layer normalization and related variance guards.
pub const NORM_EPS: f64 = 1e-8;

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_C1: f64 = 0.044715;

/// Handle to a node in one [`GradGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Gradient sink shaped like a parameter list.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    slots: Vec<Vec<f64>>,
}

impl ParamGrads {
    /// Zeroed sink matching `params` shapes.
    pub fn like(params: &[Tensor]) -> Self {
        ParamGrads {
            slots: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Gradient slice for parameter `idx`.
    pub fn slot(&self, idx: usize) -> &[f64] {
        &self.slots[idx]
    }

    /// Mutable gradient slice for parameter `idx`.
    pub fn slot_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.slots[idx]
    }

    /// Number of parameter slots.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    /// True when the sink tracks no parameters.
    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Resets all slots to zero.
    pub fn zero(&mut self) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Multiplies every slot by `c` (used for batch-mean scaling).
    pub fn scale(&mut self, c: f64) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Adds `other` slot-wise; shapes must match.
    pub fn add_from(&mut self, other: &ParamGrads) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Largest absolute entry across all slots (diagnostics).
    pub fn max_abs(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn add(&mut self, idx: usize, g: &[f64]) {
        let s = &mut self.slots[idx];
        assert_eq!(s.len(), g.len(), "parameter gradient shape mismatch");
        for (x, y) in s.iter_mut().zip(g) {
            *x += y;
        }
    }
}

enum Node {
    LeafParam { param: usize },
    LeafConst,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    RowSoftmax(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    AddRow(NodeId, NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols { src: NodeId, start: usize, len: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Gelu(NodeId),
    Conv1dCirc { x: NodeId, kernel: NodeId },
    CalendarSum { tables: [NodeId; 4], idx: Vec<[usize; 4]> },
    BandDecompose(NodeId),
    WindowSoft { rho: NodeId, phi: NodeId, len: usize },
    SteMask { x: NodeId, soft: NodeId, hard: Vec<f64>, relaxed: bool },
    Reshape(NodeId),
    ScaleShift { src: NodeId, scale: f64 },
    MseLoss { pred: NodeId, target: Vec<f64> },
}

/// One forward pass recorded for reverse-mode replay.
#[derive(Default)]
pub struct GradGraph {
    nodes: Vec<Node>,
    vals: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    /// Number of `dft_real` calls made by band decompositions on this graph
    /// (forward only) — ablation instrumentation.
    pub band_dft_calls: u64,
}

impl GradGraph {
    pub fn new() -> Self {
        GradGraph::default()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.vals[id.0]
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        assert_eq!(self.vals[id.0].len(), 1, "node is not a scalar");
        self.vals[id.0].data[0]
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when no operations are recorded.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node, val: Tensor) -> NodeId {
        self.nodes.push(node);
        self.vals.push(val);
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// A constant (non-trainable) input.
    pub fn leaf_const(&mut self, t: Tensor) -> NodeId {
        self.push(Node::LeafConst, t)
    }

    /// A trainable leaf: `param` is the index used in the [`ParamGrads`] sink.
    pub fn leaf_param(&mut self, param: usize, t: &Tensor) -> NodeId {
        self.push(Node::LeafParam { param }, t.clone())
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "add shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::Add(a, b), val)
    }

    /// Elementwise difference `a − b`.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "sub shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::Sub(a, b), val)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "mul shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::Mul(a, b), val)
    }

    /// Scalar multiple `c·a`.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = &self.vals[a.0];
        let data = ta.data.iter().map(|x| c * x).collect();
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::Scale(a, c), val)
    }

    /// Matrix product `a · b`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.cols, tb.rows, "matmul inner dimension mismatch");
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        mm_acc(&mut out.data, &ta.data, &tb.data, ta.rows, ta.cols, tb.cols);
        self.push(Node::MatMul(a, b), out)
    }

    /// Matrix product against a transposed right operand: `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(ta.cols, tb.cols, "matmul_nt inner dimension mismatch");
        let mut out = Tensor::zeros(ta.rows, tb.rows);
        mm_nt_acc(&mut out.data, &ta.data, &tb.data, ta.rows, ta.cols, tb.rows);
        self.push(Node::MatMulNT(a, b), out)
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let ta = &self.vals[a.0];
        let (r, c) = (ta.rows, ta.cols);
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = ta.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            let exps: Vec<f64> = row
                .iter()
                .map(|&x| {
                    let e = (x - m).exp();
                    denom += e;
                    e
                })
                .collect();
            data.extend(exps.into_iter().map(|e| e / denom));
        }
        let val = Tensor::from_vec(r, c, data);
        self.push(Node::RowSoftmax(a), val)
    }

    /// Sum of all entries → 1×1.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.vals[a.0].data.iter().sum();
        self.push(Node::SumAll(a), Tensor::from_vec(1, 1, vec![s]))
    }

    /// Mean of all entries → 1×1.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = &self.vals[a.0];
        let s: f64 = t.data.iter().sum();
        let val = Tensor::from_vec(1, 1, vec![s / t.len() as f64]);
        self.push(Node::MeanAll(a), val)
    }

    /// Broadcast row addition: matrix `a` (r×c) plus row vector `row` (1×c).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (ta, tr) = (&self.vals[a.0], &self.vals[row.0]);
        assert_eq!(tr.rows, 1, "add_row expects a 1×c row vector");
        assert_eq!(ta.cols, tr.cols, "add_row width mismatch");
        let mut data = ta.data.clone();
        for i in 0..ta.rows {
            for j in 0..ta.cols {
                data[i * ta.cols + j] += tr.data[j];
            }
        }
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::AddRow(a, row), val)
    }

    /// Feature-wise concatenation of equal-height matrices.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.vals[parts[0].0].rows;
        let total: usize = parts.iter().map(|p| self.vals[p.0].cols).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                let t = &self.vals[p.0];
                assert_eq!(t.rows, rows, "concat_cols height mismatch");
                data.extend_from_slice(t.row(i));
            }
        }
        let val = Tensor::from_vec(rows, total, data);
        self.push(Node::ConcatCols(parts.to_vec()), val)
    }

    /// Column slice `[start, start+len)`.
    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let t = &self.vals[src.0];
        assert!(start + len <= t.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(t.rows * len);
        for i in 0..t.rows {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let val = Tensor::from_vec(t.rows, len, data);
        self.push(Node::SliceCols { src, start, len }, val)
    }

    /// Per-row layer normalization with affine output: rows are standardized
    /// by their population statistics, then scaled by `gamma` and shifted by
    /// `beta` (both 1×c).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (tx, tg, tb) = (&self.vals[x.0], &self.vals[gamma.0], &self.vals[beta.0]);
        let (r, c) = (tx.rows, tx.cols);
        assert_eq!((tg.rows, tg.cols), (1, c), "layer_norm gamma must be 1×c");
        assert_eq!((tb.rows, tb.cols), (1, c), "layer_norm beta must be 1×c");
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = tx.row(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for j in 0..c {
                data.push((row[j] - mu) * inv * tg.data[j] + tb.data[j]);
            }
        }
        let val = Tensor::from_vec(r, c, data);
        self.push(Node::LayerNorm { x, gamma, beta }, val)
    }

    /// Elementwise GELU (tanh approximation).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let ta = &self.vals[a.0];
        let data = ta.data.iter().map(|&x| gelu_fwd(x)).collect();
        let val = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Node::Gelu(a), val)
    }

    /// Width-3 circular 1-D convolution of a single channel into `d` output
    /// channels: `out[t][c] = Σ_j kernel[j][c] · x[(t+j−1) mod L]`, no bias.
    pub fn conv1d_circ(&mut self, x: NodeId, kernel: NodeId) -> NodeId {
        let (tx, tk) = (&self.vals[x.0], &self.vals[kernel.0]);
        assert_eq!(tx.cols, 1, "conv1d_circ input must be L×1");
        assert_eq!(tk.rows, 3, "conv1d_circ kernel must be 3×d");
        let (l, d) = (tx.rows, tk.cols);
        let mut data = vec![0.0; l * d];
        for t in 0..l {
            for j in 0..3 {
                let src = (t + l + j - 1) % l;
                let xv = tx.data[src];
                if xv == 0.0 {
                    continue;
                }
                let krow = tk.row(j);
                let orow = &mut data[t * d..(t + 1) * d];
                for cch in 0..d {
                    orow[cch] += xv * krow[cch];
                }
            }
        }
        let val = Tensor::from_vec(l, d, data);
        self.push(Node::Conv1dCirc { x, kernel }, val)
    }

    /// Sum of four table-row gathers: `out[t] = Σ_f tables[f][idx[t][f]]`.
    ///
    /// `idx` holds 0-based row indices per timestep for (hour, weekday, day,
    /// month) tables; callers validate ranges beforehand.
    pub fn calendar_sum(&mut self, tables: [NodeId; 4], idx: &[[usize; 4]]) -> NodeId {
        let d = self.vals[tables[0].0].cols;
        for t in &tables {
            assert_eq!(self.vals[t.0].cols, d, "calendar table width mismatch");
        }
        let l = idx.len();
        let mut data = vec![0.0; l * d];
        for (t, rows) in idx.iter().enumerate() {
            let out = &mut data[t * d..(t + 1) * d];
            for (f, &row) in rows.iter().enumerate() {
                let table = &self.vals[tables[f].0];
                assert!(row < table.rows, "calendar index out of range");
                for (o, v) in out.iter_mut().zip(table.row(row)) {
                    *o += v;
                }
            }
        }
        let val = Tensor::from_vec(l, d, data);
        self.push(
            Node::CalendarSum {
                tables,
                idx: idx.to_vec(),
            },
            val,
        )
    }

    /// Per-frequency band decomposition of an L×d embedding into an
    /// L×(⌊L/2⌋+1)·d feature matrix.
    ///
    /// Block `k` (columns `k·d..(k+1)·d`) holds, per channel, the exact
    /// time-domain component of frequency `k`:
    /// `g_k·(Re(X_k)·cos(2πkt/L) − Im(X_k)·sin(2πkt/L))` with `g_k = 1/L`
    /// for the DC and (even-length) Nyquist components and `2/L` otherwise.
    /// Blocks therefore sum to the input exactly, and each block's magnitude
    /// envelope is the spectrum modulus at `k`.
    pub fn band_decompose(&mut self, e: NodeId) -> NodeId {
        let te = &self.vals[e.0];
        let (l, d) = (te.rows, te.cols);
        assert!(l >= 2, "band_decompose requires L >= 2");
        let half = l / 2;
        let p = plan(l);
        let mut data = vec![0.0; l * (half + 1) * d];
        let width = (half + 1) * d;
        let mut col = vec![0.0; l];
        for c in 0..d {
            for t in 0..l {
                col[t] = te.data[t * d + c];
            }
            let spec = dft_real(&col).expect("length checked above");
            self.band_dft_calls += 1;
            for k in 0..=half {
                let gk = band_gain(l, k);
                let (re, im) = (spec.re[k], spec.im[k]);
                let cos = p.cos_row(k);
                let sin = p.sin_row(k);
                for t in 0..l {
                    data[t * width + k * d + c] = gk * (re * cos[t] - im * sin[t]);
                }
            }
        }
        let val = Tensor::from_vec(l, width, data);
        self.push(Node::BandDecompose(e), val)
    }

    /// Parameterized window mask evaluated over `len` positions:
    /// `soft[t] = sigmoid(0.54 − 0.46·cos(2πt/(ω(len−1)) + φ))` with
    /// `ω = exp(rho)`. Both parameters are 1×1 nodes.
    pub fn window_soft(&mut self, rho: NodeId, phi: NodeId, len: usize) -> NodeId {
        assert!(len >= 2, "window_soft requires len >= 2");
        assert_eq!(self.vals[rho.0].len(), 1, "rho must be scalar");
        assert_eq!(self.vals[phi.0].len(), 1, "phi must be scalar");
        let om = self.vals[rho.0].data[0].exp();
        let ph = self.vals[phi.0].data[0];
        let mut data = Vec::with_capacity(len);
        for t in 0..len {
            let a_t = 2.0 * std::f64::consts::PI * t as f64 / (len as f64 - 1.0);
            let raw = 0.54 - 0.46 * (a_t / om + ph).cos();
            data.push(sigmoid(raw));
        }
        let val = Tensor::from_vec(len, 1, data);
        self.push(Node::WindowSoft { rho, phi, len }, val)
    }

    /// Masked selection with straight-through gradients.
    ///
    /// Forward multiplies `x` by the binary mask `hard` (and additionally by
    /// `soft` when `relaxed` — the smooth surrogate used for gradient
    /// validation). Backward routes the mask gradient through `soft` on the
    /// selected positions only, in both modes:
    /// `∂/∂soft = g·x·hard`, matching the relaxed objective away from the
    /// binarization threshold.
    pub fn ste_mask(&mut self, x: NodeId, soft: NodeId, hard: Vec<f64>, relaxed: bool) -> NodeId {
        let (tx, ts) = (&self.vals[x.0], &self.vals[soft.0]);
        assert_eq!(tx.cols, 1, "ste_mask input must be L×1");
        assert_eq!(ts.rows, tx.rows, "ste_mask soft/input length mismatch");
        assert_eq!(hard.len(), tx.rows, "ste_mask hard/input length mismatch");
        let data = (0..tx.rows)
            .map(|t| {
                let base = tx.data[t] * hard[t];
                if relaxed {
                    base * ts.data[t]
                } else {
                    base
                }
            })
            .collect();
        let val = Tensor::from_vec(tx.rows, 1, data);
        self.push(
            Node::SteMask {
                x,
                soft,
                hard,
                relaxed,
            },
            val,
        )
    }

    /// Shape change without data movement (row-major layout preserved).
    pub fn reshape(&mut self, src: NodeId, rows: usize, cols: usize) -> NodeId {
        let t = &self.vals[src.0];
        assert_eq!(t.len(), rows * cols, "reshape must preserve element count");
        let val = Tensor::from_vec(rows, cols, t.data.clone());
        self.push(Node::Reshape(src), val)
    }

    /// Elementwise affine map with constant coefficients: `scale·x + shift`.
    pub fn scale_shift(&mut self, src: NodeId, scale: f64, shift: f64) -> NodeId {
        let t = &self.vals[src.0];
        let data = t.data.iter().map(|&v| scale * v + shift).collect();
        let val = Tensor::from_vec(t.rows, t.cols, data);
        self.push(Node::ScaleShift { src, scale }, val)
    }

    /// Mean squared error of a 1×n prediction against a constant target.
    pub fn mse_loss(&mut self, pred: NodeId, target: &[f64]) -> NodeId {
        let t = &self.vals[pred.0];
        assert_eq!(t.len(), target.len(), "mse_loss length mismatch");
        let n = target.len() as f64;
        let s: f64 = t
            .data
            .iter()
            .zip(target)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        let val = Tensor::from_vec(1, 1, vec![s / n]);
        self.push(
            Node::MseLoss {
                pred,
                target: target.to_vec(),
            },
            val,
        )
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    ///
    /// Visits each recorded node exactly once in reverse order and adds
    /// `∂loss/∂p` into `sink` for every trainable leaf `p`. Node cotangents
    /// are rebuilt per call, so calling twice accumulates doubled leaf
    /// gradients in the sink (the documented contract).
    pub fn backward(&mut self, loss: NodeId, sink: &mut ParamGrads) -> Result<()> {
        if self.vals[loss.0].len() != 1 {
            return Err(FcError::Shape(format!(
                "backward requires a scalar loss, got {}x{}",
                self.vals[loss.0].rows, self.vals[loss.0].cols
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            match &self.nodes[id] {
                Node::LeafConst => {}
                Node::LeafParam { param } => sink.add(*param, &g),
                Node::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc_all(&mut self.grads, &self.vals, a, &g);
                    acc_all(&mut self.grads, &self.vals, b, &g);
                }
                Node::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    acc_all(&mut self.grads, &self.vals, a, &g);
                    let slot = slot(&mut self.grads, &self.vals, b);
                    for (d, gi) in slot.iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Node::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    {
                        let bd = self.vals[b.0].data.clone();
                        let slot = slot(&mut self.grads, &self.vals, a);
                        for ((d, gi), bv) in slot.iter_mut().zip(&g).zip(&bd) {
                            *d += gi * bv;
                        }
                    }
                    let ad = self.vals[a.0].data.clone();
                    let slot = slot(&mut self.grads, &self.vals, b);
                    for ((d, gi), av) in slot.iter_mut().zip(&g).zip(&ad) {
                        *d += gi * av;
                    }
                }
                Node::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let slot = slot(&mut self.grads, &self.vals, a);
                    for (d, gi) in slot.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Node::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.vals[a.0].rows, self.vals[a.0].cols);
                    let n = self.vals[b.0].cols;
                    {
                        let bd = std::mem::take(&mut self.vals[b.0].data);
                        let da = slot(&mut self.grads, &self.vals, a);
                        mm_nt_acc(da, &g, &bd, m, n, k);
                        self.vals[b.0].data = bd;
                    }
                    let ad = std::mem::take(&mut self.vals[a.0].data);
                    let db = slot(&mut self.grads, &self.vals, b);
                    mm_tn_acc(db, &ad, &g, m, k, n);
                    self.vals[a.0].data = ad;
                }
                Node::MatMulNT(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.vals[a.0].rows, self.vals[a.0].cols);
                    let n = self.vals[b.0].rows;
                    {
                        let bd = std::mem::take(&mut self.vals[b.0].data);
                        let da = slot(&mut self.grads, &self.vals, a);
                        mm_acc(da, &g, &bd, m, n, k);
                        self.vals[b.0].data = bd;
                    }
                    let ad = std::mem::take(&mut self.vals[a.0].data);
                    let db = slot(&mut self.grads, &self.vals, b);
                    mm_tn_acc(db, &g, &ad, m, n, k);
                    self.vals[a.0].data = ad;
                }
                Node::RowSoftmax(a) => {
                    let a = *a;
                    let y = self.vals[id].data.clone();
                    let (r, c) = (self.vals[id].rows, self.vals[id].cols);
                    let slot = slot(&mut self.grads, &self.vals, a);
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        let dr = &mut slot[i * c..(i + 1) * c];
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Node::SumAll(a) => {
                    let a = *a;
                    let gv = g[0];
                    let slot = slot(&mut self.grads, &self.vals, a);
                    slot.iter_mut().for_each(|d| *d += gv);
                }
                Node::MeanAll(a) => {
                    let a = *a;
                    let gv = g[0] / self.vals[a.0].len() as f64;
                    let slot = slot(&mut self.grads, &self.vals, a);
                    slot.iter_mut().for_each(|d| *d += gv);
                }
                Node::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    let cols = self.vals[row.0].cols;
                    let rows = self.vals[a.0].rows;
                    acc_all(&mut self.grads, &self.vals, a, &g);
                    let slot = slot(&mut self.grads, &self.vals, row);
                    for i in 0..rows {
                        for j in 0..cols {
                            slot[j] += g[i * cols + j];
                        }
                    }
                }
                Node::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let rows = self.vals[id].rows;
                    let total = self.vals[id].cols;
                    let mut start = 0;
                    for p in parts {
                        let w = self.vals[p.0].cols;
                        let slot = slot(&mut self.grads, &self.vals, p);
                        for i in 0..rows {
                            let src = &g[i * total + start..i * total + start + w];
                            let dst = &mut slot[i * w..(i + 1) * w];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        start += w;
                    }
                }
                Node::SliceCols { src, start, len } => {
                    let (src, start, len) = (*src, *start, *len);
                    let cols = self.vals[src.0].cols;
                    let rows = self.vals[src.0].rows;
                    let slot = slot(&mut self.grads, &self.vals, src);
                    for i in 0..rows {
                        let dst = &mut slot[i * cols + start..i * cols + start + len];
                        let sg = &g[i * len..(i + 1) * len];
                        for (d, s) in dst.iter_mut().zip(sg) {
                            *d += s;
                        }
                    }
                }
                Node::LayerNorm { x, gamma, beta } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let (r, c) = (self.vals[x.0].rows, self.vals[x.0].cols);
                    let xd = self.vals[x.0].data.clone();
                    let gd = self.vals[gamma.0].data.clone();
                    let cf = c as f64;
                    let mut dx = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i in 0..r {
                        let row = &xd[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let mu = row.iter().sum::<f64>() / cf;
                        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cf;
                        let inv = 1.0 / (var + NORM_EPS).sqrt();
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let xhat = (row[j] - mu) * inv;
                            let gj = gr[j] * gd[j];
                            m1 += gj;
                            m2 += gj * xhat;
                            dgamma[j] += gr[j] * xhat;
                            dbeta[j] += gr[j];
                        }
                        m1 /= cf;
                        m2 /= cf;
                        for j in 0..c {
                            let xhat = (row[j] - mu) * inv;
                            dx[i * c + j] += inv * (gr[j] * gd[j] - m1 - xhat * m2);
                        }
                    }
                    acc_all(&mut self.grads, &self.vals, x, &dx);
                    acc_all(&mut self.grads, &self.vals, gamma, &dgamma);
                    acc_all(&mut self.grads, &self.vals, beta, &dbeta);
                }
                Node::Gelu(a) => {
                    let a = *a;
                    let xd = self.vals[a.0].data.clone();
                    let slot = slot(&mut self.grads, &self.vals, a);
                    for ((d, gi), &x) in slot.iter_mut().zip(&g).zip(&xd) {
                        *d += gi * gelu_bwd(x);
                    }
                }
                Node::Conv1dCirc { x, kernel } => {
                    let (x, kernel) = (*x, *kernel);
                    let l = self.vals[x.0].rows;
                    let d = self.vals[kernel.0].cols;
                    let xd = self.vals[x.0].data.clone();
                    let kd = self.vals[kernel.0].data.clone();
                    let mut dx = vec![0.0; l];
                    let mut dk = vec![0.0; 3 * d];
                    for t in 0..l {
                        let gr = &g[t * d..(t + 1) * d];
                        for j in 0..3 {
                            let src = (t + l + j - 1) % l;
                            let xv = xd[src];
                            let krow = &kd[j * d..(j + 1) * d];
                            let dkrow = &mut dk[j * d..(j + 1) * d];
                            let mut s = 0.0;
                            for cch in 0..d {
                                dkrow[cch] += gr[cch] * xv;
                                s += gr[cch] * krow[cch];
                            }
                            dx[src] += s;
                        }
                    }
                    acc_all(&mut self.grads, &self.vals, x, &dx);
                    acc_all(&mut self.grads, &self.vals, kernel, &dk);
                }
                Node::CalendarSum { tables, idx } => {
                    let tables = *tables;
                    let idx = idx.clone();
                    let d = self.vals[tables[0].0].cols;
                    for (f, table) in tables.iter().enumerate() {
                        let slot = slot(&mut self.grads, &self.vals, *table);
                        for (t, rows) in idx.iter().enumerate() {
                            let row = rows[f];
                            let dst = &mut slot[row * d..(row + 1) * d];
                            let src = &g[t * d..(t + 1) * d];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                    }
                }
                Node::BandDecompose(e) => {
                    let e = *e;
                    let (l, d) = (self.vals[e.0].rows, self.vals[e.0].cols);
                    let half = l / 2;
                    let width = (half + 1) * d;
                    let p = plan(l);
                    let mut de = vec![0.0; l * d];
                    for c in 0..d {
                        for k in 0..=half {
                            let gk = band_gain(l, k);
                            let cos = p.cos_row(k);
                            let sin = p.sin_row(k);
                            let mut rg = 0.0;
                            let mut ig = 0.0;
                            for t in 0..l {
                                let gv = g[t * width + k * d + c];
                                rg += gv * cos[t];
                                ig += gv * sin[t];
                            }
                            for t in 0..l {
                                de[t * d + c] += gk * (cos[t] * rg + sin[t] * ig);
                            }
                        }
                    }
                    acc_all(&mut self.grads, &self.vals, e, &de);
                }
                Node::WindowSoft { rho, phi, len } => {
                    let (rho, phi, len) = (*rho, *phi, *len);
                    let om = self.vals[rho.0].data[0].exp();
                    let ph = self.vals[phi.0].data[0];
                    let soft = self.vals[id].data.clone();
                    let mut drho = 0.0;
                    let mut dphi = 0.0;
                    for (t, (&gv, &s)) in g.iter().zip(&soft).enumerate() {
                        let a_t = 2.0 * std::f64::consts::PI * t as f64 / (len as f64 - 1.0);
                        let theta = a_t / om + ph;
                        let common = gv * s * (1.0 - s) * 0.46 * theta.sin();
                        dphi += common;
                        drho += common * (-a_t / om);
                    }
                    acc_all(&mut self.grads, &self.vals, rho, &[drho]);
                    acc_all(&mut self.grads, &self.vals, phi, &[dphi]);
                }
                Node::SteMask {
                    x,
                    soft,
                    hard,
                    relaxed,
                } => {
                    let (x, soft, relaxed) = (*x, *soft, *relaxed);
                    let hard = hard.clone();
                    {
                        let sd = self.vals[soft.0].data.clone();
                        let slot = slot(&mut self.grads, &self.vals, x);
                        for t in 0..hard.len() {
                            let factor = if relaxed {
                                sd[t] * hard[t]
                            } else {
                                hard[t]
                            };
                            slot[t] += g[t] * factor;
                        }
                    }
                    let xd = self.vals[x.0].data.clone();
                    let slot = slot(&mut self.grads, &self.vals, soft);
                    for t in 0..hard.len() {
                        slot[t] += g[t] * xd[t] * hard[t];
                    }
                }
                Node::Reshape(src) => {
                    let src = *src;
                    acc_all(&mut self.grads, &self.vals, src, &g);
                }
                Node::ScaleShift { src, scale } => {
                    let (src, scale) = (*src, *scale);
                    let slot = slot(&mut self.grads, &self.vals, src);
                    for (d, gi) in slot.iter_mut().zip(&g) {
                        *d += scale * gi;
                    }
                }
                Node::MseLoss { pred, target } => {
                    let pred = *pred;
                    let target = target.clone();
                    let n = target.len() as f64;
                    let pd = self.vals[pred.0].data.clone();
                    let slot = slot(&mut self.grads, &self.vals, pred);
                    for j in 0..target.len() {
                        slot[j] += g[0] * 2.0 * (pd[j] - target[j]) / n;
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], vals: &[Tensor], id: NodeId) -> &'a mut [f64] {
    let len = vals[id.0].len();
    grads[id.0]
        .get_or_insert_with(|| vec![0.0; len])
        .as_mut_slice()
}

fn acc_all(grads: &mut [Option<Vec<f64>>], vals: &[Tensor], id: NodeId, delta: &[f64]) {
    let s = slot(grads, vals, id);
    debug_assert_eq!(s.len(), delta.len());
    for (d, v) in s.iter_mut().zip(delta) {
        *d += v;
    }
}

/// Conjugate-pair gain for frequency `k` of a length-`l` real signal.
pub(crate) fn band_gain(l: usize, k: usize) -> f64 {
    let lf = l as f64;
    if k == 0 || (l % 2 == 0 && k == l / 2) {
        1.0 / lf
    } else {
        2.0 / lf
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gelu_fwd(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}
