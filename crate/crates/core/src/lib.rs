//! Butterfly Transform (BFT) channel fusion.
//!
//! A base-k butterfly transform is a product of `log_k n` sparse layers in
//! which every node mixes exactly `k` partners. It computes a structured
//! `n x n` linear map in `O(k n log_k n)` operations and is used here as a
//! drop-in replacement for pointwise (1x1) convolutions.
//!
//! Modules:
//! - [`tensor`]: feature maps, dense matrices and the dense pointwise product.
//! - [`butterfly`]: butterfly specs, weights, forward passes, materialization, MAC counts.
//! - [`init`]: Xavier-matched butterfly initialization.
//! - [`grad`]: reverse-mode gradients and a finite-difference checker.
//! - [`baselines`]: circulant, low-rank and Fastfood structured fusions.
//! - [`audit`]: fusion graphs and the fusion design-principle auditor.
//! - [`flops`]: architecture-level MAC profiling (MobileNetV1, ShuffleNetV2).
//! - [`weights_io`]: the `BFTW1` binary weight container and JSON sidecar.
//! - [`demo`], [`verify`], [`bench`]: the toy training demo, self-check suites and microbenchmarks.

pub mod audit;
pub mod baselines;
pub mod bench;
pub mod butterfly;
pub mod demo;
mod error;
pub mod flops;
pub mod grad;
pub mod init;
pub mod kernels;
pub mod oracle;
pub mod tensor;
pub mod verify;
pub mod weights_io;

pub use error::{BftError, Result};

/// Norm-wise relative difference `max|a - b| / max|b|`.
///
/// Falls back to the absolute difference when `b` is identically zero.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "rel_diff on slices of different length");
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
