//! Adam with bias correction, plus a central-difference gradient checker.

use alloc::vec::Vec;
use core::fmt;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    NonFiniteGradient { tensor: usize },
    NonFiniteObjective,
    ShapeMismatch { tensor: usize },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::NonFiniteGradient { tensor } => {
                write!(f, "non-finite gradient in tensor {}", tensor)
            }
            OptimError::NonFiniteObjective => write!(f, "objective evaluated to a non-finite value"),
            OptimError::ShapeMismatch { tensor } => {
                write!(f, "gradient shape mismatch for tensor {}", tensor)
            }
        }
    }
}

pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[&Matrix]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            second: shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One bias-corrected update over the whole parameter list. A non-finite
    /// gradient aborts before anything (moments, counter, parameters) moves.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<(), OptimError> {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        assert_eq!(params.len(), self.first.len(), "optimizer built for a different model");
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.rows() != g.rows() || p.cols() != g.cols() {
                return Err(OptimError::ShapeMismatch { tensor: i });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient { tensor: i });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params[i].data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}

/// Compares the analytic gradient of `f` against central finite differences
/// with step `h`, coordinate by coordinate, and returns the worst relative
/// error `|a - n| / max(1, |a|, |n|)`.
///
/// `f` evaluates the objective at a parameter list and also returns its
/// reverse-mode gradients; the finite-difference side only uses the value.
pub fn grad_check<F>(f: F, params: &[Matrix], h: f64) -> Result<f64, OptimError>
where
    F: Fn(&[Matrix]) -> (f64, Vec<Matrix>),
{
    let (base, analytic) = f(params);
    if !base.is_finite() {
        return Err(OptimError::NonFiniteObjective);
    }
    assert_eq!(analytic.len(), params.len(), "gradient list length mismatch");

    let mut worst = 0.0f64;
    let mut work: Vec<Matrix> = params.to_vec();
    for ti in 0..params.len() {
        for j in 0..params[ti].data().len() {
            let orig = params[ti].data()[j];
            work[ti].data_mut()[j] = orig + h;
            let (fp, _) = f(&work);
            work[ti].data_mut()[j] = orig - h;
            let (fm, _) = f(&work);
            work[ti].data_mut()[j] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(OptimError::NonFiniteObjective);
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
