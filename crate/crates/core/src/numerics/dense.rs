//! Dense row-major double-precision matrices and the small set of matmul
//! kernels the gradient graph is built on.
//!
//! The kernels accumulate into their destination (`c += …`) because the
//! backward pass sums cotangents from multiple consumers; callers that want
//! a fresh product zero the destination first. All loops stream the inner
//! dimension contiguously so the compiler can vectorize them.

use crate::error::{FcError, Result};

/// A dense row-major matrix of `f64` values.
///
/// Vectors are represented as `L×1` or `1×n` matrices. Trainable parameters
/// set `requires_grad` and carry their accumulated gradient in `grad`;
/// intermediate activations leave both unset.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub requires_grad: bool,
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    /// An all-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            requires_grad: false,
            grad: None,
        }
    }

    /// A matrix wrapping `data` in row-major order.
    ///
    /// Panics if `data.len() != rows * cols` (the shape invariant).
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// A matrix filled by `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor::from_vec(rows, cols, data)
    }

    /// Marks this tensor trainable and allocates its gradient buffer.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    /// Number of stored values.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor holds no values.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value at `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Resets the gradient buffer to zero (no-op for non-trainable tensors).
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it if needed.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.data.len(), "gradient shape mismatch");
        let g = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// Fails if any stored value is non-finite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FcError::Numeric(format!(
                "non-finite value in {context} ({}x{})",
                self.rows, self.cols
            )))
        }
    }

    /// Plain matrix product `self · other` (fresh allocation).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Tensor::zeros(self.rows, other.cols);
        mm_acc(
            &mut out.data,
            &self.data,
            &other.data,
            self.rows,
            self.cols,
            other.cols,
        );
        out
    }

    /// Transposed copy.
    pub fn transposed(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`.
///
/// The k-loop is unrolled by four so each pass streams four rows of `b`
/// against one output row; the j-loop is contiguous and vectorizes.
pub fn mm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            for j in 0..n {
                c_row[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
            kk += 1;
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ` (i.e. `C[i][j] = Σ_q a[i][q]·b[j][q]`).
///
/// Row-times-row dot products with four partial accumulators.
pub fn mm_nt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut s3 = 0.0;
            let mut q = 0;
            while q + 4 <= k {
                s0 += a_row[q] * b_row[q];
                s1 += a_row[q + 1] * b_row[q + 1];
                s2 += a_row[q + 2] * b_row[q + 2];
                s3 += a_row[q + 3] * b_row[q + 3];
                q += 4;
            }
            let mut s = (s0 + s1) + (s2 + s3);
            while q < k {
                s += a_row[q] * b_row[q];
                q += 1;
            }
            c_row[j] += s;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]` (i.e. `C[p][j] = Σ_i a[i][p]·b[i][j]`).
pub fn mm_tn_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &ap) in a_row.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += ap * b_row[j];
            }
        }
    }
}
