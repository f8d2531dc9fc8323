use super::{BalanceTarget, BalancingError, Method, WeightedCohort};
use crate::data::{standardize_column, Cohort};
use crate::logistic::{LogisticModel, DEFAULT_LAMBDA};

pub const DEFAULT_CLIP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct IptwSolution {
    /// Clipped propensity per patient.
    pub propensity: Vec<f64>,
    pub weights: Vec<f64>,
    pub clipped: usize,
}

/// Treated-population inverse-probability weights: treated patients get 1,
/// controls get `p/(1−p)` with `p` clipped into `[clip, 1 − clip]`.
/// Feature columns are standardized before the propensity fit.
pub fn fit_iptw(
    rows: &[Vec<f64>],
    treatment: &[bool],
    clip: f64,
) -> Result<IptwSolution, BalancingError> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(BalancingError::InvalidInput(format!(
            "clip must lie in (0, 0.5), got {clip}"
        )));
    }
    let n = rows.len();
    if treatment.len() != n || n == 0 {
        return Err(BalancingError::InvalidInput("length mismatch".into()));
    }
    if treatment.iter().all(|&t| t) || treatment.iter().all(|&t| !t) {
        return Err(BalancingError::InvalidInput(
            "both arms must be nonempty".into(),
        ));
    }
    let d = rows[0].len();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| standardize_column(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let model = LogisticModel::fit(&x, treatment, DEFAULT_LAMBDA)?;
    let mut clipped = 0;
    let propensity: Vec<f64> = x
        .iter()
        .map(|r| {
            let p = model.predict(r);
            let c = p.clamp(clip, 1.0 - clip);
            clipped += usize::from(c != p);
            c
        })
        .collect();
    let weights = propensity
        .iter()
        .zip(treatment)
        .map(|(&p, &t)| if t { 1.0 } else { p / (1.0 - p) })
        .collect();
    Ok(IptwSolution {
        propensity,
        weights,
        clipped,
    })
}

/// IPTW on the first-moment columns of `target` (covariates, score, latent).
pub fn iptw_weights(
    cohort: &Cohort,
    target: &BalanceTarget,
    clip: f64,
) -> Result<WeightedCohort, BalancingError> {
    if target.rows.len() != cohort.len() {
        return Err(BalancingError::InvalidInput(
            "target rows differ from cohort size".into(),
        ));
    }
    cohort.require_two_arms()?;
    let sol = fit_iptw(&target.first_moments().rows, &cohort.treatment(), clip)?;
    let mut out = WeightedCohort::new(
        cohort.clone(),
        (0..cohort.len()).collect(),
        sol.weights,
        Method::Iptw,
    );
    out.diagnostics.clipped = Some(sol.clipped);
    Ok(out)
}
