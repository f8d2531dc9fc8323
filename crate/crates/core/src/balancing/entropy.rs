use nalgebra::{DMatrix, DVector};

use super::{BalanceTarget, BalancingError, Method, WeightedCohort};
use crate::data::{standardize_column, Cohort};

pub const ENTROPY_TOL: f64 = 1e-8;
pub const ENTROPY_MAX_ITER: usize = 200;
/// Multipliers this large mean the dual is running off to infinity.
const MAX_MULTIPLIER: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct EntropySolution {
    /// Weight per patient: 1 for treated, exponential-form weights summing to
    /// the treated count for controls.
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Largest absolute moment gap (standardized units) after solving.
    pub max_residual: f64,
}

struct Dual {
    /// Control rows centered at the treated mean.
    centered: Vec<DVector<f64>>,
}

impl Dual {
    /// Log-sum-exp objective, softmax probabilities, gradient and Hessian.
    fn evaluate(&self, lambda: &DVector<f64>) -> (f64, Vec<f64>, DVector<f64>, DMatrix<f64>) {
        let a: Vec<f64> = self.centered.iter().map(|z| z.dot(lambda)).collect();
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / total).collect();
        let dim = lambda.len();
        let mut grad = DVector::zeros(dim);
        for (z, &pj) in self.centered.iter().zip(&p) {
            grad.axpy(pj, z, 1.0);
        }
        let mut hess = DMatrix::zeros(dim, dim);
        for (z, &pj) in self.centered.iter().zip(&p) {
            let d = z - &grad;
            hess.ger(pj, &d, &d, 1.0);
        }
        (max + total.ln(), p, grad, hess)
    }

    fn objective(&self, lambda: &DVector<f64>) -> f64 {
        let a: Vec<f64> = self.centered.iter().map(|z| z.dot(lambda)).collect();
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }
}

/// Maximum-entropy control weights whose weighted feature means equal the
/// treated means. Columns are standardized over the whole sample before the
/// constraints are built; constant columns are skipped.
pub fn solve_entropy(
    rows: &[Vec<f64>],
    names: &[String],
    treatment: &[bool],
) -> Result<EntropySolution, BalancingError> {
    let n = rows.len();
    if treatment.len() != n {
        return Err(BalancingError::InvalidInput("length mismatch".into()));
    }
    let n_t = treatment.iter().filter(|&&t| t).count();
    if n_t == 0 || n_t == n {
        return Err(BalancingError::InvalidInput(
            "both arms must be nonempty".into(),
        ));
    }
    let d = names.len();
    let mut cols: Vec<(usize, Vec<f64>)> = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let z = standardize_column(&col);
        if z.iter().any(|v| *v != 0.0) {
            cols.push((j, z));
        }
    }
    let dim = cols.len();
    let treated_mean: Vec<f64> = cols
        .iter()
        .map(|(_, z)| {
            z.iter()
                .zip(treatment)
                .filter(|(_, &t)| t)
                .map(|(v, _)| v)
                .sum::<f64>()
                / n_t as f64
        })
        .collect();
    let controls: Vec<usize> = (0..n).filter(|&i| !treatment[i]).collect();
    let dual = Dual {
        centered: controls
            .iter()
            .map(|&i| {
                DVector::from_iterator(
                    dim,
                    cols.iter().zip(&treated_mean).map(|((_, z), m)| z[i] - m),
                )
            })
            .collect(),
    };

    let finish = |p: &[f64], iterations: usize, residual: f64| {
        let mut weights = vec![1.0; n];
        for (&i, pj) in controls.iter().zip(p) {
            weights[i] = n_t as f64 * pj;
        }
        EntropySolution {
            weights,
            iterations,
            max_residual: residual,
        }
    };
    let worst = |grad: &DVector<f64>| -> (String, f64) {
        let k = grad.iamax();
        (names[cols[k].0].clone(), grad[k])
    };

    let mut lambda = DVector::zeros(dim);
    for iter in 0..=ENTROPY_MAX_ITER {
        let (value, p, grad, hess) = dual.evaluate(&lambda);
        let residual = if dim == 0 { 0.0 } else { grad.amax() };
        if residual < ENTROPY_TOL {
            return Ok(finish(&p, iter, residual));
        }
        if iter == ENTROPY_MAX_ITER {
            return Err(BalancingError::NotConverged {
                iterations: iter,
                residual,
            });
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => hess
                .svd(true, true)
                .solve(&grad, 1e-12)
                .map_err(|e| BalancingError::InvalidInput(e.to_string()))?,
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lambda - &step * t;
            if dual.objective(&cand) <= value - 1e-4 * t * slope {
                lambda = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || lambda.amax() > MAX_MULTIPLIER {
            let (constraint, residual) = worst(&grad);
            return Err(BalancingError::Infeasible {
                constraint,
                residual,
            });
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Entropy balancing of `cohort` on `target`; `moments = 1` drops the
/// quadratic score and latent columns.
pub fn entropy_balance(
    cohort: &Cohort,
    target: &BalanceTarget,
    moments: u8,
) -> Result<WeightedCohort, BalancingError> {
    if target.rows.len() != cohort.len() {
        return Err(BalancingError::InvalidInput(
            "target rows differ from cohort size".into(),
        ));
    }
    let t = match moments {
        1 => target.first_moments(),
        2 => target.clone(),
        m => {
            return Err(BalancingError::InvalidInput(format!(
                "moments must be 1 or 2, got {m}"
            )))
        }
    };
    cohort.require_two_arms()?;
    let sol = solve_entropy(&t.rows, &t.names, &cohort.treatment())?;
    let mut out = WeightedCohort::new(
        cohort.clone(),
        (0..cohort.len()).collect(),
        sol.weights,
        Method::Entropy,
    );
    out.diagnostics.iterations = Some(sol.iterations);
    out.diagnostics.max_residual = Some(sol.max_residual);
    Ok(out)
}
