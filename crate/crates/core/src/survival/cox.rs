use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SurvivalError;

/// Treatment effect from a weighted Cox fit, on the log-hazard scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HREstimate {
    pub log_hr: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub hr: f64,
    pub iterations: usize,
    pub converged: bool,
    /// A 1e-9 ridge had to be added to the information matrix.
    pub ridge_applied: bool,
}

/// Full solver output: every coefficient plus the treatment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub estimate: HREstimate,
    /// Treatment coefficient first, then retained covariates in input order.
    pub coefficients: Vec<f64>,
    /// Input covariate columns dropped for being constant.
    pub dropped_columns: Vec<usize>,
    pub log_likelihood: f64,
    pub max_gradient: f64,
    /// Whether the information matrix at the optimum is positive definite.
    pub information_pd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
    pub max_halvings: usize,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            gradient_tol: 1e-8,
            max_halvings: 40,
        }
    }
}

const RIDGE: f64 = 1e-9;
/// Coefficients beyond this size indicate a monotone likelihood.
const MAX_ABS_COEF: f64 = 15.0;

/// Rows with positive weight, sorted by descending time and grouped by tie.
struct RiskData {
    x: Vec<DVector<f64>>,
    event: Vec<bool>,
    weight: Vec<f64>,
    /// `[start, end)` ranges of equal-time blocks in descending time order.
    blocks: Vec<(usize, usize)>,
}

impl RiskData {
    fn new(design: &[Vec<f64>], times: &[f64], events: &[bool], weights: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..times.len()).filter(|&i| weights[i] > 0.0).collect();
        idx.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let x = idx
            .iter()
            .map(|&i| DVector::from_column_slice(&design[i]))
            .collect();
        let time: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let event = idx.iter().map(|&i| events[i]).collect();
        let weight = idx.iter().map(|&i| weights[i]).collect();
        let mut blocks = Vec::new();
        let mut start = 0;
        for k in 1..=time.len() {
            if k == time.len() || time[k] != time[start] {
                blocks.push((start, k));
                start = k;
            }
        }
        Self {
            x,
            event,
            weight,
            blocks,
        }
    }

    /// Log partial likelihood (Efron ties), gradient and information matrix.
    fn evaluate(
        &self,
        beta: &DVector<f64>,
        derivatives: bool,
    ) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = beta.len();
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        for &(start, end) in &self.blocks {
            let mut d_count = 0usize;
            let mut d_weight = 0.0;
            let mut e0 = 0.0;
            let mut e1 = DVector::zeros(p);
            let mut e2 = DMatrix::zeros(p, p);
            for k in start..end {
                let eta = self.x[k].dot(beta);
                let r = self.weight[k] * eta.exp();
                s0 += r;
                if derivatives {
                    s1.axpy(r, &self.x[k], 1.0);
                    s2.ger(r, &self.x[k], &self.x[k], 1.0);
                }
                if self.event[k] {
                    d_count += 1;
                    d_weight += self.weight[k];
                    loglik += self.weight[k] * eta;
                    e0 += r;
                    if derivatives {
                        grad.axpy(self.weight[k], &self.x[k], 1.0);
                        e1.axpy(r, &self.x[k], 1.0);
                        e2.ger(r, &self.x[k], &self.x[k], 1.0);
                    }
                }
            }
            if d_count == 0 {
                continue;
            }
            let mean_w = d_weight / d_count as f64;
            for l in 0..d_count {
                let frac = l as f64 / d_count as f64;
                let denom = s0 - frac * e0;
                loglik -= mean_w * denom.ln();
                if derivatives {
                    let a = &s1 - &e1 * frac;
                    let b = &s2 - &e2 * frac;
                    grad.axpy(-mean_w / denom, &a, 1.0);
                    info += b * (mean_w / denom);
                    info.ger(-mean_w / (denom * denom), &a, &a, 1.0);
                }
            }
        }
        (loglik, grad, info)
    }
}

/// Log partial likelihood (Efron ties) of a full design at `beta`.
pub fn cox_partial_likelihood(
    design: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    weights: &[f64],
    beta: &[f64],
) -> f64 {
    let data = RiskData::new(design, times, events, weights);
    data.evaluate(&DVector::from_column_slice(beta), false).0
}

/// Weighted Cox regression of survival on treatment plus `covariates`
/// (rows = patients). Returns the treatment coefficient with its model-based
/// standard error.
pub fn cox_fit(
    covariates: &[Vec<f64>],
    treatment: &[bool],
    times: &[f64],
    events: &[bool],
    weights: &[f64],
) -> Result<HREstimate, SurvivalError> {
    cox_fit_full(
        covariates,
        treatment,
        times,
        events,
        weights,
        CoxOptions::default(),
    )
    .map(|f| f.estimate)
}

pub fn cox_fit_full(
    covariates: &[Vec<f64>],
    treatment: &[bool],
    times: &[f64],
    events: &[bool],
    weights: &[f64],
    opts: CoxOptions,
) -> Result<CoxFit, SurvivalError> {
    let n = times.len();
    if treatment.len() != n || events.len() != n || weights.len() != n || covariates.len() != n {
        return Err(SurvivalError::InvalidInput("length mismatch".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(SurvivalError::InvalidInput(format!("invalid weight {w}")));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(SurvivalError::InvalidInput(format!("invalid time {t}")));
    }
    let d_in = covariates.first().map_or(0, Vec::len);
    if covariates.iter().any(|r| r.len() != d_in) {
        return Err(SurvivalError::InvalidInput(
            "ragged covariate matrix".into(),
        ));
    }
    if !(0..n).any(|i| events[i] && weights[i] > 0.0) {
        return Err(SurvivalError::NoEvents);
    }

    // Weighted column means over positive-weight rows; constants are dropped.
    let total_w: f64 = weights.iter().sum();
    let column = |i: usize, j: usize| -> f64 {
        if j == 0 {
            f64::from(u8::from(treatment[i]))
        } else {
            covariates[i][j - 1]
        }
    };
    let mut keep = Vec::new();
    let mut means = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..=d_in {
        let mean = (0..n).map(|i| weights[i] * column(i, j)).sum::<f64>() / total_w;
        let var = (0..n)
            .map(|i| weights[i] * (column(i, j) - mean).powi(2))
            .sum::<f64>()
            / total_w;
        let scale = (0..n)
            .filter(|&i| weights[i] > 0.0)
            .map(|i| column(i, j).abs())
            .fold(1.0f64, f64::max);
        if var.sqrt() <= 1e-10 * scale {
            if j == 0 {
                return Err(SurvivalError::Singular(
                    "treatment is constant among weighted patients".into(),
                ));
            }
            dropped.push(j - 1);
        } else {
            keep.push(j);
            means.push(mean);
        }
    }
    let design: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            keep.iter()
                .zip(&means)
                .map(|(&j, m)| column(i, j) - m)
                .collect()
        })
        .collect();
    let p = keep.len();

    // Collinearity check on the weighted cross-product of the centered design.
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        if weights[i] > 0.0 {
            let xi = DVector::from_column_slice(&design[i]);
            xtx.ger(weights[i] / total_w, &xi, &xi, 1.0);
        }
    }
    let sv = xtx.clone().singular_values();
    let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    if smin <= 1e-10 * smax {
        return Err(SurvivalError::Singular(format!(
            "collinear design (condition {:.3e})",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }

    let data = RiskData::new(&design, times, events, weights);
    let mut beta = DVector::zeros(p);
    let (mut loglik, mut grad, mut info) = data.evaluate(&beta, true);
    let mut iterations = 0;
    let mut ridge_applied = false;
    let mut converged = false;
    while iterations < opts.max_iter {
        if grad.amax() < opts.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match newton_step(&info, &grad) {
            Some(s) => s,
            None => {
                ridge_applied = true;
                let ridged = &info + DMatrix::identity(p, p) * RIDGE;
                newton_step(&ridged, &grad)
                    .ok_or_else(|| SurvivalError::Singular("information matrix".into()))?
            }
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let candidate = &beta + &step * scale;
            let (ll, g, h) = data.evaluate(&candidate, true);
            if ll.is_finite() && ll >= loglik - 1e-12 * loglik.abs() {
                beta = candidate;
                loglik = ll;
                grad = g;
                info = h;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged && grad.amax() < opts.gradient_tol {
        converged = true;
    }
    let max_gradient = grad.amax();
    if !converged || beta.amax() > MAX_ABS_COEF {
        return Err(SurvivalError::NotConverged {
            iterations,
            gradient: max_gradient,
        });
    }
    let information_pd = info.clone().cholesky().is_some();
    let cov = match info.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            ridge_applied = true;
            (&info + DMatrix::identity(p, p) * RIDGE)
                .cholesky()
                .ok_or_else(|| SurvivalError::Singular("information matrix at optimum".into()))?
                .inverse()
        }
    };
    let log_hr = beta[0];
    let se = cov[(0, 0)].sqrt();
    Ok(CoxFit {
        estimate: HREstimate {
            log_hr,
            se,
            ci95: (log_hr - 1.96 * se, log_hr + 1.96 * se),
            hr: log_hr.exp(),
            iterations,
            converged,
            ridge_applied,
        },
        coefficients: beta.iter().copied().collect(),
        dropped_columns: dropped,
        log_likelihood: loglik,
        max_gradient,
        information_pd,
    })
}

fn newton_step(info: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    info.clone().cholesky().map(|ch| ch.solve(grad))
}
