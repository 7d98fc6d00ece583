//! Real-input discrete Fourier transform over the half spectrum.
//!
//! For a real sequence of length `L` only components `k = 0..⌊L/2⌋` are
//! computed; the remainder follows by conjugate symmetry. The transform is
//! the textbook summation `X_k = Σ_n x_n·e^(−j2πkn/L)` evaluated against
//! cached cos/sin tables, which keeps results bit-identical across calls and
//! makes the naive O(L²) definition itself the reference implementation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{FcError, Result};

/// Half spectrum of a real length-`L` input: components `0..=⌊L/2⌋`.
#[derive(Debug, Clone)]
pub struct ComplexSpectrum {
    /// Input length the spectrum was computed from.
    pub input_len: usize,
    /// Real parts, `⌊L/2⌋+1` entries.
    pub re: Vec<f64>,
    /// Imaginary parts, same length as `re`.
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    /// Number of stored components (`⌊L/2⌋+1`).
    pub fn len(&self) -> usize {
        self.re.len()
    }

    /// True when no components are stored (never the case for valid input).
    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Cached cos/sin tables for one input length.
///
/// `cos[k*len + n] = cos(2πkn/len)` and likewise for `sin`, for
/// `k = 0..=⌊len/2⌋`. Shared by the transform and by the band-decomposition
/// graph operation.
pub(crate) struct DftPlan {
    pub len: usize,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl DftPlan {
    fn new(len: usize) -> Self {
        let half = len / 2;
        let mut cos = Vec::with_capacity((half + 1) * len);
        let mut sin = Vec::with_capacity((half + 1) * len);
        for k in 0..=half {
            for n in 0..len {
                // Reduce k·n modulo len before the trig call so the tables,
                // and everything derived from them, are exactly periodic.
                let r = (k * n) % len;
                let angle = 2.0 * std::f64::consts::PI * (r as f64) / (len as f64);
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        DftPlan { len, cos, sin }
    }

    /// `cos(2πk·/len)` row for component `k`.
    pub fn cos_row(&self, k: usize) -> &[f64] {
        &self.cos[k * self.len..(k + 1) * self.len]
    }

    /// `sin(2πk·/len)` row for component `k`.
    pub fn sin_row(&self, k: usize) -> &[f64] {
        &self.sin[k * self.len..(k + 1) * self.len]
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<DftPlan>>> = RefCell::new(HashMap::new());
}

/// Fetches (building on first use) the table plan for length `len`.
pub(crate) fn plan(len: usize) -> Rc<DftPlan> {
    PLANS.with(|cell| {
        Rc::clone(
            cell.borrow_mut()
                .entry(len)
                .or_insert_with(|| Rc::new(DftPlan::new(len))),
        )
    })
}

/// Total number of `dft_real` invocations in this process.
///
/// Instrumentation for the ablation harness: the linear-mapping variant must
/// never touch the transform. The counter only ever increases; concurrent
/// tests should assert on deltas from their own calls.
static DFT_CALLS: AtomicU64 = AtomicU64::new(0);

/// Current value of the invocation counter.
pub fn dft_call_count() -> u64 {
    DFT_CALLS.load(Ordering::Relaxed)
}

/// Half-spectrum DFT of a real input.
///
/// Errors with an invalid-length message when `x.len() < 2`.
pub fn dft_real(x: &[f64]) -> Result<ComplexSpectrum> {
    let len = x.len();
    if len < 2 {
        return Err(FcError::Shape(format!(
            "dft_real requires input length >= 2, got {len}"
        )));
    }
    DFT_CALLS.fetch_add(1, Ordering::Relaxed);
    let p = plan(len);
    let half = len / 2;
    let mut re = Vec::with_capacity(half + 1);
    let mut im = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let c = p.cos_row(k);
        let s = p.sin_row(k);
        let mut sr = 0.0;
        let mut si = 0.0;
        for n in 0..len {
            sr += x[n] * c[n];
            si -= x[n] * s[n];
        }
        re.push(sr);
        im.push(si);
    }
    Ok(ComplexSpectrum {
        input_len: len,
        re,
        im,
    })
}

/// Per-component modulus `√(Re² + Im²)` of a half spectrum.
pub fn amplitude(spec: &ComplexSpectrum) -> Vec<f64> {
    spec.re
        .iter()
        .zip(&spec.im)
        .map(|(r, i)| r.hypot(*i))
        .collect()
}
