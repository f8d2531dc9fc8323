//! L2-regularized logistic regression fitted by damped Newton iterations.
//!
//! The penalty `λ/2·‖θ‖²` covers the intercept as well, so single-class
//! training data still yields a finite model whose predictions stay inside
//! (0, 1).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogisticError {
    #[error("logistic regression did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("invalid logistic input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row))
    }

    /// Fits `P(y = 1 | x)` on the rows of `x` with labels `y ∈ {0, 1}`.
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<Self, LogisticError> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(LogisticError::InvalidInput(format!(
                "{} rows, {} labels",
                n,
                y.len()
            )));
        }
        let d = x[0].len();
        if x.iter()
            .any(|r| r.len() != d || r.iter().any(|v| !v.is_finite()))
        {
            return Err(LogisticError::InvalidInput(
                "ragged or non-finite design".into(),
            ));
        }
        let p = d + 1;
        let rows: Vec<DVector<f64>> = x
            .iter()
            .map(|r| DVector::from_iterator(p, std::iter::once(1.0).chain(r.iter().copied())))
            .collect();
        let objective = |theta: &DVector<f64>| -> f64 {
            let nll: f64 = rows
                .iter()
                .zip(y)
                .map(|(r, &yi)| {
                    let z = r.dot(theta);
                    if yi {
                        softplus(-z)
                    } else {
                        softplus(z)
                    }
                })
                .sum();
            nll + 0.5 * lambda * theta.norm_squared()
        };
        let mut theta = DVector::<f64>::zeros(p);
        let mut value = objective(&theta);
        let max_iter = 100;
        for iter in 0..max_iter {
            let mut grad = &theta * lambda;
            let mut hess = DMatrix::<f64>::identity(p, p) * lambda;
            for (r, &yi) in rows.iter().zip(y) {
                let mu = sigmoid(r.dot(&theta));
                grad.axpy(mu - f64::from(u8::from(yi)), r, 1.0);
                hess.ger(mu * (1.0 - mu), r, r, 1.0);
            }
            if grad.amax() < 1e-9 * n as f64 {
                return Ok(Self::from_theta(&theta, iter));
            }
            let step = hess
                .cholesky()
                .map(|c| c.solve(&grad))
                .ok_or_else(|| LogisticError::InvalidInput("singular Hessian".into()))?;
            // Newton decrement below the objective's rounding noise.
            if grad.dot(&step) < 1e-12 * (1.0 + value.abs()) {
                return Ok(Self::from_theta(&theta, iter));
            }
            let mut scale = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand = &theta - &step * scale;
                let v = objective(&cand);
                if v <= value {
                    theta = cand;
                    value = v;
                    moved = true;
                    break;
                }
                scale *= 0.5;
            }
            if !moved {
                // Objective is flat to machine precision.
                return Ok(Self::from_theta(&theta, iter + 1));
            }
        }
        Err(LogisticError::NotConverged(max_iter))
    }

    fn from_theta(theta: &DVector<f64>, iterations: usize) -> Self {
        Self {
            intercept: theta[0],
            coefficients: theta.iter().skip(1).copied().collect(),
            iterations,
        }
    }
}
