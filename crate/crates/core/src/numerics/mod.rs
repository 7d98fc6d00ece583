//! Numeric foundation: dense matrices, the half-spectrum DFT, the
//! reverse-mode gradient graph, and finite-difference validation.

pub mod dense;
pub mod dft;
pub mod gradcheck;
pub mod graph;

pub use dense::Tensor;
pub use dft::{amplitude, dft_call_count, dft_real, ComplexSpectrum};
pub use gradcheck::grad_check;
pub use graph::{GradGraph, NodeId, ParamGrads, NORM_EPS};
