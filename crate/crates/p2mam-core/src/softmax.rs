//! Max-stabilized softmax over a masked row, and the cross-entropy loss it
//! feeds. The fused softmax+cross-entropy backward rule lives in the
//! autodiff tape; the functions here are the forward definitions shared by
//! both paths.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::matrix::Matrix;

/// Scores below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SoftmaxError {
    AllMasked,
}

impl fmt::Display for SoftmaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SoftmaxError::AllMasked => write!(f, "softmax over a fully masked row"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    TargetOutOfRange { target: u32, m: usize },
    NotNormalized { sum: f64 },
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::TargetOutOfRange { target, m } => {
                write!(f, "target item {} outside 1..={}", target, m)
            }
            LossError::NotNormalized { sum } => {
                write!(f, "score vector sums to {} instead of 1", sum)
            }
        }
    }
}

/// Softmax of `values[i] / scale` over positions where `mask[i]` is false.
/// Masked positions come out exactly zero; the rest sum to one.
pub fn masked_softmax_slice(values: &[f64], mask: &[bool], scale: f64) -> Result<Vec<f64>, SoftmaxError> {
    assert_eq!(values.len(), mask.len(), "mask length must match row length");
    assert!(scale > 0.0, "softmax scale must be positive");
    let mut max = f64::NEG_INFINITY;
    for (v, m) in values.iter().zip(mask) {
        if !*m {
            let s = v / scale;
            if s > max {
                max = s;
            }
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(SoftmaxError::AllMasked);
    }
    let mut out = vec![0.0; values.len()];
    let mut sum = 0.0;
    for i in 0..values.len() {
        if !mask[i] {
            let e = libm::exp(values[i] / scale - max);
            out[i] = e;
            sum += e;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(out)
}

/// Row-form wrapper over [`masked_softmax_slice`] for `1 x n` matrices.
pub fn masked_row_softmax(logits: &Matrix, mask: &[bool], scale: f64) -> Result<Matrix, SoftmaxError> {
    assert_eq!(logits.rows(), 1, "masked_row_softmax expects a row vector");
    let out = masked_softmax_slice(logits.row(0), mask, scale)?;
    Ok(Matrix::row_vector(out))
}

/// Unmasked stabilized softmax of a raw slice.
pub fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let mask = vec![false; values.len()];
    masked_softmax_slice(values, &mask, 1.0).expect("nonempty row")
}

/// Negative log likelihood of `target` under an already-normalized score
/// vector laid out as columns `0..m` for items `1..=m`.
pub fn cross_entropy(scores: &Matrix, target: u32) -> Result<f64, LossError> {
    assert_eq!(scores.rows(), 1, "cross_entropy expects a row vector");
    let m = scores.cols();
    if target == 0 || target as usize > m {
        return Err(LossError::TargetOutOfRange { target, m });
    }
    let sum: f64 = scores.row(0).iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(LossError::NotNormalized { sum });
    }
    let p = scores.at(0, target as usize - 1).max(LOG_FLOOR);
    Ok(-libm::log(p))
}
