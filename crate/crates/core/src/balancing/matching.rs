use serde::{Deserialize, Serialize};

use super::{BalancingError, Method, WeightedCohort};
use crate::data::{standardize, Cohort};
use crate::numeric::{quantile_sorted, squared_distance};

/// Allowed range of the scalar treated-survivor weight.
pub const WEIGHT_BOUNDS: (f64, f64) = (0.5, 20.0);

/// Bucket index of every patient: `n_bins` equal-count buckets cut at score
/// quantiles. Scores equal to a cut point fall in the lower bucket, so equal
/// scores always share a bucket.
pub fn score_buckets(scores: &[f64], n_bins: usize) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..n_bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64))
        .collect();
    scores
        .iter()
        .map(|s| cuts.partition_point(|c| c < s))
        .collect()
}

/// Score-stratified greedy 1:1 matching. Within each bucket, treated patients
/// are taken in descending score order and paired with the nearest unused
/// control in standardized covariate space. Unmatched patients are dropped
/// and every retained patient has weight 1.
pub fn prognostic_match(
    cohort: &Cohort,
    scores: &[f64],
    n_bins: usize,
) -> Result<WeightedCohort, BalancingError> {
    if n_bins == 0 {
        return Err(BalancingError::InvalidInput("n_bins must be >= 1".into()));
    }
    if scores.len() != cohort.len() {
        return Err(BalancingError::InvalidInput(
            "score length differs from cohort size".into(),
        ));
    }
    cohort.require_two_arms()?;
    let x = standardize(cohort).covariate_rows();
    let treatment = cohort.treatment();
    let bucket = score_buckets(scores, n_bins);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for b in 0..n_bins {
        let mut treated: Vec<usize> = (0..cohort.len())
            .filter(|&i| bucket[i] == b && treatment[i])
            .collect();
        let mut controls: Vec<usize> = (0..cohort.len())
            .filter(|&i| bucket[i] == b && !treatment[i])
            .collect();
        treated.sort_by(|&a, &c| scores[c].total_cmp(&scores[a]).then(a.cmp(&c)));
        for t in treated {
            let Some((pos, _)) = controls
                .iter()
                .enumerate()
                .map(|(pos, &c)| (pos, squared_distance(&x[t], &x[c])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                break;
            };
            // `controls` stays in ascending index order, so min_by keeps the lower index on ties.
            pairs.push((t, controls.remove(pos)));
        }
    }
    if pairs.is_empty() {
        return Err(BalancingError::NoMatchesFound);
    }

    let mut index: Vec<usize> = pairs.iter().flat_map(|&(t, c)| [t, c]).collect();
    index.sort_unstable();
    let position = |i: usize| index.binary_search(&i).expect("matched index present");
    let sub = cohort.subset(&index)?;
    let n = index.len();
    let mut out = WeightedCohort::new(sub, index.clone(), vec![1.0; n], Method::Matching);
    for &(t, c) in &pairs {
        out.matched_partner[position(t)] = Some(position(c));
        out.matched_partner[position(c)] = Some(position(t));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarWeight {
    /// Exact solution of the balance equation, if the denominator is usable.
    pub solution: Option<f64>,
    pub weight: f64,
    pub clipped: bool,
    pub degenerate: bool,
}

/// Single weight `w` on treated patients without an event so that the
/// treated mean of the latent factor equals the control mean:
///
/// `(S_B + w·S_G) / (n_B + w·n_G) = m_U`,
///
/// where B and G are the treated patients with and without an event.
/// `latent` is aligned with `matched.cohort`.
pub fn scalar_reweight(
    matched: &WeightedCohort,
    latent: &[f64],
) -> Result<WeightedCohort, BalancingError> {
    let c = &matched.cohort;
    if latent.len() != c.len() {
        return Err(BalancingError::InvalidInput(
            "latent length differs from matched cohort".into(),
        ));
    }
    let treatment = c.treatment();
    let events = c.events();
    let (mut s_b, mut n_b, mut s_g, mut n_g, mut s_u, mut n_u) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..c.len() {
        match (treatment[i], events[i]) {
            (true, true) => {
                s_b += latent[i];
                n_b += 1.0;
            }
            (true, false) => {
                s_g += latent[i];
                n_g += 1.0;
            }
            (false, _) => {
                s_u += latent[i];
                n_u += 1.0;
            }
        }
    }
    if n_g == 0.0 {
        return Err(BalancingError::EmptySubgroup);
    }
    if n_u == 0.0 {
        return Err(BalancingError::InvalidInput(
            "matched cohort has no controls".into(),
        ));
    }
    let m_u = s_u / n_u;
    let numerator = s_b - m_u * n_b;
    let denominator = m_u * n_g - s_g;
    let info = if denominator.abs() < 1e-12 {
        ScalarWeight {
            solution: None,
            weight: 1.0,
            clipped: false,
            degenerate: true,
        }
    } else {
        let w = numerator / denominator;
        let clipped_w = w.clamp(WEIGHT_BOUNDS.0, WEIGHT_BOUNDS.1);
        ScalarWeight {
            solution: Some(w),
            weight: clipped_w,
            clipped: clipped_w != w,
            degenerate: false,
        }
    };
    let mut out = matched.clone();
    for i in 0..c.len() {
        out.weights[i] = if treatment[i] && !events[i] {
            info.weight
        } else {
            1.0
        };
    }
    out.diagnostics.scalar_weight = Some(info);
    out.refresh_ess();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn cohort(rows: &[(bool, bool, f64)]) -> Cohort {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(treatment, event, x))| PatientRecord {
                id: format!("p{i}"),
                time: 1.0 + i as f64,
                event,
                treatment,
                covariates: vec![x],
                external_score: None,
                center: None,
            })
            .collect();
        Cohort::new(recs, vec!["x".into()]).unwrap()
    }

    #[test]
    fn buckets_are_equal_count_and_tie_stable() {
        let s: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(score_buckets(&s, 3), vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert_eq!(score_buckets(&[0.5; 6], 3), vec![0; 6]);
    }

    #[test]
    fn twins_and_surplus_treated() {
        let c = cohort(&[
            (true, true, 0.0),
            (false, true, 0.0),
            (true, false, 1.0),
            (false, false, 1.0),
        ]);
        let m = prognostic_match(&c, &[0.5; 4], 1).unwrap();
        assert_eq!(m.cohort.len(), 4);
        assert_eq!(m.matched_partner, vec![Some(1), Some(0), Some(3), Some(2)]);

        let c = cohort(&[
            (true, true, 0.0),
            (true, true, 1.0),
            (true, true, 2.0),
            (false, true, 1.5),
        ]);
        let m = prognostic_match(&c, &[0.1, 0.2, 0.3, 0.2], 1).unwrap();
        // Highest score treated (x = 2) is processed first.
        assert_eq!(m.source_index, vec![2, 3]);
    }

    #[test]
    fn no_shared_bucket() {
        let c = cohort(&[
            (true, true, 0.0),
            (true, true, 1.0),
            (false, true, 0.0),
            (false, true, 1.0),
        ]);
        assert!(matches!(
            prognostic_match(&c, &[0.9, 0.8, 0.1, 0.2], 2),
            Err(BalancingError::NoMatchesFound)
        ));
    }

    fn matched_with(rows: &[(bool, bool, f64)]) -> WeightedCohort {
        let c = cohort(rows);
        let n = c.len();
        WeightedCohort::new(c, (0..n).collect(), vec![1.0; n], Method::Matching)
    }

    #[test]
    fn scalar_weight_examples() {
        // Control mean 0, treated events sum -2, treated survivors sum 4 -> w = 0.5.
        let m = matched_with(&[
            (true, true, 0.0),
            (true, true, 0.0),
            (true, false, 0.0),
            (true, false, 0.0),
            (false, true, 0.0),
            (false, false, 0.0),
        ]);
        let u = [-1.0, -1.0, 2.0, 2.0, 0.5, -0.5];
        let r = scalar_reweight(&m, &u).unwrap();
        let sw = r.diagnostics.scalar_weight.unwrap();
        assert!((sw.weight - 0.5).abs() < 1e-15 && !sw.clipped);
        assert_eq!(r.weights, vec![1.0, 1.0, 0.5, 0.5, 1.0, 1.0]);

        // Already balanced means -> w = 1.
        let u = [-1.0, -1.0, 1.0, 1.0, 0.5, -0.5];
        assert!(
            (scalar_reweight(&m, &u)
                .unwrap()
                .diagnostics
                .scalar_weight
                .unwrap()
                .weight
                - 1.0)
                .abs()
                < 1e-15
        );

        // Exact solution 35 -> clipped to 20.
        let u = [-3.5, -3.5, 0.0, 0.2, 0.0, 0.0];
        let sw = scalar_reweight(&m, &u)
            .unwrap()
            .diagnostics
            .scalar_weight
            .unwrap();
        assert!((sw.solution.unwrap() - 35.0).abs() < 1e-12);
        assert_eq!(sw.weight, 20.0);
        assert!(sw.clipped);
    }

    #[test]
    fn empty_survivor_subgroup() {
        let m = matched_with(&[(true, true, 0.0), (false, false, 0.0)]);
        assert!(matches!(
            scalar_reweight(&m, &[0.1, 0.2]),
            Err(BalancingError::EmptySubgroup)
        ));
    }
}
