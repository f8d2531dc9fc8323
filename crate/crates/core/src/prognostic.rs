//! Baseline prognostic score: an external column passed through, or an
//! internal event-by-horizon logistic model cross-fitted on untreated patients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize, Cohort};
use crate::logistic::{LogisticError, LogisticModel, DEFAULT_LAMBDA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrognosticError {
    #[error("external score missing for rows {rows:?}")]
    MissingScore { rows: Vec<usize> },
    #[error(
        "{labeled} untreated patients have a determinable horizon label; need at least {needed}"
    )]
    InsufficientLabels { labeled: usize, needed: usize },
    #[error("a training split lacks one outcome class after {attempts} fold assignments")]
    SingleClassFold { attempts: usize },
    #[error("folds must be >= 2, got {0}")]
    InvalidFolds(usize),
    #[error(transparent)]
    Logistic(#[from] LogisticError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    External,
    InternalCrossfit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAssignment {
    pub scores: Vec<f64>,
    pub source: ScoreSource,
    pub horizon: Option<f64>,
    pub folds: Option<usize>,
    /// Held-out fold of each labeled untreated patient; `None` for patients
    /// scored by the model trained on every labeled untreated patient.
    pub fold_of: Vec<Option<usize>>,
    /// External scores fall outside `[0, 1]`.
    pub scale_warning: bool,
    /// All labeled training patients share one outcome class.
    pub single_class: bool,
}

pub const DEFAULT_FOLDS: usize = 5;
const FOLD_ATTEMPTS: usize = 3;

pub fn external_score(cohort: &Cohort) -> Result<ScoreAssignment, PrognosticError> {
    let missing: Vec<usize> = cohort
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.external_score.is_none_or(|s| !s.is_finite()))
        .map(|(i, _)| i + 1)
        .collect();
    if !missing.is_empty() {
        return Err(PrognosticError::MissingScore { rows: missing });
    }
    let scores: Vec<f64> = cohort
        .records()
        .iter()
        .filter_map(|r| r.external_score)
        .collect();
    let scale_warning = scores.iter().any(|s| !(0.0..=1.0).contains(s));
    Ok(ScoreAssignment {
        fold_of: vec![None; scores.len()],
        scores,
        source: ScoreSource::External,
        horizon: None,
        folds: None,
        scale_warning,
        single_class: false,
    })
}

/// Event-within-horizon label: positive if the event happened by the
/// horizon, negative if followed beyond it, otherwise indeterminate.
pub fn horizon_label(time: f64, event: bool, horizon: f64) -> Option<bool> {
    if event && time <= horizon {
        Some(true)
    } else if time > horizon {
        Some(false)
    } else {
        None
    }
}

pub fn crossfit_score(
    cohort: &Cohort,
    horizon: f64,
    folds: usize,
    seed: u64,
) -> Result<ScoreAssignment, PrognosticError> {
    if folds < 2 {
        return Err(PrognosticError::InvalidFolds(folds));
    }
    let x = standardize(cohort).covariate_rows();
    let labeled: Vec<(usize, bool)> = cohort
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.treatment)
        .filter_map(|(i, r)| horizon_label(r.time, r.event, horizon).map(|y| (i, y)))
        .collect();
    if labeled.len() < folds.max(2) {
        return Err(PrognosticError::InsufficientLabels {
            labeled: labeled.len(),
            needed: folds.max(2),
        });
    }
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    let single_class = positives == 0 || positives == labeled.len();

    let assignment = (0..FOLD_ATTEMPTS)
        .map(|attempt| stratified_folds(&labeled, folds, seed.wrapping_add(attempt as u64)))
        .find(|fold| single_class || every_split_has_both_classes(&labeled, fold, folds))
        .ok_or(PrognosticError::SingleClassFold {
            attempts: FOLD_ATTEMPTS,
        })?;

    let fit = |members: &[usize]| -> Result<LogisticModel, LogisticError> {
        let xs: Vec<Vec<f64>> = members.iter().map(|&k| x[labeled[k].0].clone()).collect();
        let ys: Vec<bool> = members.iter().map(|&k| labeled[k].1).collect();
        LogisticModel::fit(&xs, &ys, DEFAULT_LAMBDA)
    };

    let n = cohort.len();
    let mut scores = vec![f64::NAN; n];
    let mut fold_of = vec![None; n];
    for f in 0..folds {
        let train: Vec<usize> = (0..labeled.len()).filter(|&k| assignment[k] != f).collect();
        let model = fit(&train)?;
        for k in (0..labeled.len()).filter(|&k| assignment[k] == f) {
            let i = labeled[k].0;
            scores[i] = model.predict(&x[i]);
            fold_of[i] = Some(f);
        }
    }
    let all: Vec<usize> = (0..labeled.len()).collect();
    let full = fit(&all)?;
    for i in 0..n {
        if fold_of[i].is_none() {
            scores[i] = full.predict(&x[i]);
        }
    }
    Ok(ScoreAssignment {
        scores,
        source: ScoreSource::InternalCrossfit,
        horizon: Some(horizon),
        folds: Some(folds),
        fold_of,
        scale_warning: false,
        single_class,
    })
}

/// Fold index per labeled patient, stratified by label: each class is
/// shuffled and dealt round-robin, continuing the deal across classes.
fn stratified_folds(labeled: &[(usize, bool)], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; labeled.len()];
    let mut next = 0;
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labeled.len())
            .filter(|&k| labeled[k].1 == class)
            .collect();
        members.shuffle(&mut rng);
        for k in members {
            out[k] = next % folds;
            next += 1;
        }
    }
    out
}

fn every_split_has_both_classes(
    labeled: &[(usize, bool)],
    assignment: &[usize],
    folds: usize,
) -> bool {
    (0..folds).all(|f| {
        let mut pos = false;
        let mut neg = false;
        for (k, &(_, y)) in labeled.iter().enumerate() {
            if assignment[k] != f {
                pos |= y;
                neg |= !y;
            }
        }
        pos && neg
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn cohort(rows: &[(f64, bool, bool, f64)]) -> Cohort {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(time, event, treatment, x))| PatientRecord {
                id: format!("p{i}"),
                time,
                event,
                treatment,
                covariates: vec![x],
                external_score: Some(0.1 * (i % 10) as f64),
                center: None,
            })
            .collect();
        Cohort::new(recs, vec!["x".into()]).unwrap()
    }

    #[test]
    fn labels() {
        assert_eq!(horizon_label(10.0, true, 60.0), Some(true));
        assert_eq!(horizon_label(60.0, true, 60.0), Some(true));
        assert_eq!(horizon_label(61.0, true, 60.0), Some(false));
        assert_eq!(horizon_label(70.0, false, 60.0), Some(false));
        assert_eq!(horizon_label(30.0, false, 60.0), None);
    }

    #[test]
    fn external_passthrough_and_missing() {
        let c = cohort(&[(1.0, true, false, 0.0), (2.0, false, true, 1.0)]);
        let s = external_score(&c).unwrap();
        assert_eq!(s.scores, vec![0.0, 0.1]);
        assert_eq!(s.source, ScoreSource::External);
        assert!(!s.scale_warning);

        let mut recs = c.records().to_vec();
        recs[1].external_score = None;
        recs[0].external_score = Some(7.0);
        let c2 = Cohort::new(recs.clone(), vec!["x".into()]).unwrap();
        assert_eq!(
            external_score(&c2),
            Err(PrognosticError::MissingScore { rows: vec![2] })
        );
        recs[1].external_score = Some(-3.0);
        let c3 = Cohort::new(recs, vec!["x".into()]).unwrap();
        assert!(external_score(&c3).unwrap().scale_warning);
    }

    #[test]
    fn all_event_labels_give_high_scores() {
        let rows: Vec<_> = (0..40)
            .map(|i| (1.0 + i as f64 * 0.5, true, i % 4 == 0, (i as f64).sin()))
            .collect();
        let s = crossfit_score(&cohort(&rows), 60.0, 5, 1).unwrap();
        assert!(s.single_class);
        assert!(s.scores.iter().all(|&p| p > 0.95 && p < 1.0));
    }

    #[test]
    fn insufficient_and_single_member_class() {
        let rows: Vec<_> = (0..6)
            .map(|i| (100.0, false, i % 2 == 0, i as f64))
            .collect();
        assert!(matches!(
            crossfit_score(&cohort(&rows), 60.0, 5, 1),
            Err(PrognosticError::InsufficientLabels { labeled: 3, .. })
        ));
        let mut rows: Vec<_> = (0..30)
            .map(|i| (100.0, false, i % 3 == 0, i as f64))
            .collect();
        rows[1] = (5.0, true, false, 1.0);
        assert!(matches!(
            crossfit_score(&cohort(&rows), 60.0, 5, 1),
            Err(PrognosticError::SingleClassFold { attempts: 3 })
        ));
        assert!(matches!(
            crossfit_score(&cohort(&rows), 60.0, 1, 1),
            Err(PrognosticError::InvalidFolds(1))
        ));
    }
}
