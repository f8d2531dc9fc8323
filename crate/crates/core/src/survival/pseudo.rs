use serde::{Deserialize, Serialize};

use super::km::product_limit;
use super::SurvivalError;

/// Which sample the jackknife RMST is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoScope {
    /// One jackknife over the whole cohort.
    #[default]
    FullSample,
    /// Separate jackknife within each treatment arm.
    PerArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcome {
    pub values: Vec<f64>,
    pub tau: f64,
    pub scope: PseudoScope,
}

/// Jackknife pseudo-observations of the restricted mean survival time,
/// `Y_i = n·μ̂ − (n−1)·μ̂₍₋ᵢ₎`. `treatment` is only consulted for
/// [`PseudoScope::PerArm`].
pub fn pseudo_rmst(
    times: &[f64],
    events: &[bool],
    treatment: &[bool],
    tau: f64,
    scope: PseudoScope,
) -> Result<PseudoOutcome, SurvivalError> {
    let n = times.len();
    if events.len() != n || (scope == PseudoScope::PerArm && treatment.len() != n) {
        return Err(SurvivalError::InvalidInput("length mismatch".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(SurvivalError::InvalidInput(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(SurvivalError::InvalidInput(format!("invalid time {t}")));
    }
    let groups: Vec<(String, Vec<usize>)> = match scope {
        PseudoScope::FullSample => vec![("all".into(), (0..n).collect())],
        PseudoScope::PerArm => [false, true]
            .iter()
            .map(|&arm| {
                let name = if arm { "treated" } else { "untreated" };
                (
                    name.to_string(),
                    (0..n).filter(|&i| treatment[i] == arm).collect(),
                )
            })
            .filter(|(_, idx): &(String, Vec<usize>)| !idx.is_empty())
            .collect(),
    };
    let mut values = vec![0.0; n];
    for (name, idx) in &groups {
        if idx.len() < 2 {
            return Err(SurvivalError::GroupTooSmall {
                group: name.clone(),
                n: idx.len(),
            });
        }
        jackknife_group(times, events, idx, tau, &mut values);
    }
    Ok(PseudoOutcome { values, tau, scope })
}

fn jackknife_group(times: &[f64], events: &[bool], idx: &[usize], tau: f64, out: &mut [f64]) {
    let mut order = idx.to_vec();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let m = order.len() as f64;
    let full = product_limit(order.iter().map(|&i| (times[i], events[i], 1.0))).rmst(tau);
    for &skip in &order {
        let loo = product_limit(
            order
                .iter()
                .filter(move |&&i| i != skip)
                .map(|&i| (times[i], events[i], 1.0)),
        )
        .rmst(tau);
        out[skip] = m * full - (m - 1.0) * loo;
    }
}
