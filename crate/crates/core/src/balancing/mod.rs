//! Balancing strategies: prognostic matching with the scalar latent-factor
//! reweight, entropy balancing and clipped IPTW, plus standardized mean
//! difference diagnostics.
//!
//! All methods target the treated population: treated patients keep weight 1
//! and controls are reweighted (or matched) toward them.

mod entropy;
mod iptw;
mod matching;

pub use entropy::{entropy_balance, solve_entropy, EntropySolution, ENTROPY_MAX_ITER, ENTROPY_TOL};
pub use iptw::{fit_iptw, iptw_weights, IptwSolution, DEFAULT_CLIP};
pub use matching::{prognostic_match, scalar_reweight, score_buckets, ScalarWeight, WEIGHT_BOUNDS};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize, standardize_column, Cohort, DataError};
use crate::logistic::LogisticError;

#[derive(Debug, Error)]
pub enum BalancingError {
    #[error("no score bucket contains both treated and control patients")]
    NoMatchesFound,
    #[error("matched cohort has no treated patients without an event")]
    EmptySubgroup,
    #[error("entropy balancing infeasible: constraint `{constraint}` cannot be met (residual {residual:e})")]
    Infeasible { constraint: String, residual: f64 },
    #[error(
        "entropy balancing did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid balancing input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Logistic(#[from] LogisticError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Matching,
    Entropy,
    Iptw,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Matching, Method::Entropy, Method::Iptw];

    pub fn name(self) -> &'static str {
        match self {
            Method::Matching => "matching",
            Method::Entropy => "entropy",
            Method::Iptw => "iptw",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown balancing method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdRow {
    pub feature: String,
    pub smd_before: f64,
    pub smd_after: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub ess_treated: f64,
    pub ess_control: f64,
    pub iterations: Option<usize>,
    pub max_residual: Option<f64>,
    pub scalar_weight: Option<ScalarWeight>,
    /// Number of propensities moved to the clip bounds.
    pub clipped: Option<usize>,
    pub smd: Vec<SmdRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCohort {
    /// Analysis cohort; a subset of the input for matching.
    pub cohort: Cohort,
    /// Index of each analysis patient in the input cohort.
    pub source_index: Vec<usize>,
    pub weights: Vec<f64>,
    pub method: Method,
    /// Matched partner (index into `cohort`) for the matching method.
    pub matched_partner: Vec<Option<usize>>,
    pub diagnostics: Diagnostics,
}

impl WeightedCohort {
    pub(crate) fn new(
        cohort: Cohort,
        source_index: Vec<usize>,
        weights: Vec<f64>,
        method: Method,
    ) -> Self {
        let n = weights.len();
        let mut out = Self {
            cohort,
            source_index,
            weights,
            method,
            matched_partner: vec![None; n],
            diagnostics: Diagnostics::default(),
        };
        out.refresh_ess();
        out
    }

    pub(crate) fn refresh_ess(&mut self) {
        let t = self.cohort.treatment();
        self.diagnostics.ess_treated = effective_sample_size(&self.weights, &t, true);
        self.diagnostics.ess_control = effective_sample_size(&self.weights, &t, false);
    }

    /// Checks nonnegative weights and positive mass in both arms.
    pub fn validate(&self) -> Result<(), BalancingError> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(BalancingError::InvalidInput(
                "negative or non-finite weight".into(),
            ));
        }
        let t = self.cohort.treatment();
        for arm in [false, true] {
            let mass: f64 = self
                .weights
                .iter()
                .zip(&t)
                .filter(|(_, &a)| a == arm)
                .map(|(w, _)| w)
                .sum();
            if mass <= 0.0 {
                return Err(BalancingError::InvalidInput(format!(
                    "arm {} has no positive weight",
                    u8::from(arm)
                )));
            }
        }
        Ok(())
    }

    /// CSV with columns `id, weight, matched_partner_id`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let ids = self.cohort.ids();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "weight", "matched_partner_id"])?;
        for (i, id) in ids.iter().enumerate() {
            let partner = self.matched_partner[i].map(|j| ids[j]).unwrap_or("");
            w.write_record([*id, &self.weights[i].to_string(), partner])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kish effective sample size of one arm.
pub fn effective_sample_size(weights: &[f64], treatment: &[bool], arm: bool) -> f64 {
    let (s, s2) = weights
        .iter()
        .zip(treatment)
        .filter(|(_, &t)| t == arm)
        .fold((0.0, 0.0), |(s, s2), (w, _)| (s + w, s2 + w * w));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smd {
    pub value: f64,
    /// Pooled SD was zero; `value` is 0 by convention.
    pub zero_pooled_sd: bool,
}

fn weighted_moments(values: &[f64], group: &[bool], weights: &[f64], arm: bool) -> (f64, f64) {
    let mut sw = 0.0;
    let mut sx = 0.0;
    for ((v, &g), w) in values.iter().zip(group).zip(weights) {
        if g == arm {
            sw += w;
            sx += w * v;
        }
    }
    let mean = sx / sw;
    let var = values
        .iter()
        .zip(group)
        .zip(weights)
        .filter(|((_, &g), _)| g == arm)
        .map(|((v, _), w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / sw;
    (mean, var)
}

/// Weighted standardized mean difference (group 1 minus group 0) with the
/// pooled SD `sqrt((v₁ + v₀)/2)` of weighted population variances.
pub fn smd(values: &[f64], group: &[bool], weights: &[f64]) -> Smd {
    let (m1, v1) = weighted_moments(values, group, weights, true);
    let (m0, v0) = weighted_moments(values, group, weights, false);
    let pooled = ((v1 + v0) / 2.0).sqrt();
    if pooled <= 1e-12 * (m1.abs().max(m0.abs()).max(1.0)) {
        Smd {
            value: 0.0,
            zero_pooled_sd: true,
        }
    } else {
        Smd {
            value: (m1 - m0) / pooled,
            zero_pooled_sd: false,
        }
    }
}

/// SMD of each feature column before (input cohort, unit weights) and after
/// balancing. `rows` holds the features of every input patient.
pub fn balance_table(
    names: &[String],
    rows: &[Vec<f64>],
    treatment: &[bool],
    balanced: &WeightedCohort,
) -> Vec<SmdRow> {
    let unit = vec![1.0; rows.len()];
    let t_after: Vec<bool> = balanced
        .source_index
        .iter()
        .map(|&i| treatment[i])
        .collect();
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let after: Vec<f64> = balanced.source_index.iter().map(|&i| col[i]).collect();
            SmdRow {
                feature: name.clone(),
                smd_before: smd(&col, treatment, &unit).value,
                smd_after: smd(&after, &t_after, &balanced.weights).value,
            }
        })
        .collect()
}

/// Which feature blocks make up a balancing target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub x: bool,
    pub score: bool,
    pub latent: bool,
    pub score_sq: bool,
    pub latent_sq: bool,
}

/// Per-patient balancing features: standardized covariates, then the
/// standardized score and latent factor, then their squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceTarget {
    pub rows: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub composition: Composition,
    /// Column kind per column, used to drop quadratic terms.
    quadratic: Vec<bool>,
}

impl BalanceTarget {
    pub fn build(
        cohort: &Cohort,
        score: Option<&[f64]>,
        latent: Option<&[f64]>,
        moments: u8,
    ) -> Result<Self, BalancingError> {
        if !(1..=2).contains(&moments) {
            return Err(BalancingError::InvalidInput(format!(
                "moments must be 1 or 2, got {moments}"
            )));
        }
        let n = cohort.len();
        let mut rows = standardize(cohort).covariate_rows();
        let mut names: Vec<String> = cohort.feature_names().to_vec();
        let mut quadratic = vec![false; names.len()];
        let mut composition = Composition {
            x: true,
            ..Composition::default()
        };
        let mut extras: Vec<(String, Vec<f64>)> = Vec::new();
        for (name, values) in [("score", score), ("latent", latent)] {
            if let Some(v) = values {
                if v.len() != n {
                    return Err(BalancingError::InvalidInput(format!(
                        "{name} length {} != {n}",
                        v.len()
                    )));
                }
                extras.push((name.to_string(), standardize_column(v)));
            }
        }
        composition.score = score.is_some();
        composition.latent = latent.is_some();
        let linear = extras.len();
        if moments == 2 {
            for k in 0..linear {
                let (name, col) = &extras[k];
                extras.push((format!("{name}^2"), col.iter().map(|v| v * v).collect()));
            }
            composition.score_sq = score.is_some();
            composition.latent_sq = latent.is_some();
        }
        for (k, (name, col)) in extras.into_iter().enumerate() {
            for (r, v) in rows.iter_mut().zip(col) {
                r.push(v);
            }
            names.push(name);
            quadratic.push(k >= linear);
        }
        Ok(Self {
            rows,
            names,
            composition,
            quadratic,
        })
    }

    /// Target from arbitrary feature rows, all treated as first-moment columns.
    pub fn from_rows(rows: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self, BalancingError> {
        if rows.iter().any(|r| r.len() != names.len()) {
            return Err(BalancingError::InvalidInput(
                "row length differs from column names".into(),
            ));
        }
        let quadratic = vec![false; names.len()];
        Ok(Self {
            rows,
            names,
            composition: Composition {
                x: true,
                ..Composition::default()
            },
            quadratic,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    /// Copy restricted to first moments.
    pub fn first_moments(&self) -> Self {
        let keep: Vec<usize> = (0..self.n_columns())
            .filter(|&j| !self.quadratic[j])
            .collect();
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            composition: Composition {
                score_sq: false,
                latent_sq: false,
                ..self.composition
            },
            quadratic: vec![false; keep.len()],
        }
    }

    pub fn expected_columns(&self, n_features: usize) -> usize {
        let c = self.composition;
        n_features * usize::from(c.x)
            + [c.score, c.latent, c.score_sq, c.latent_sq]
                .iter()
                .filter(|&&b| b)
                .count()
    }
}
