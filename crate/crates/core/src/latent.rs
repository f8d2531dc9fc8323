//! Latent prognostic factor.
//!
//! For every patient a directional neighbor set is drawn from the same
//! treatment arm: event patients are compared with patients followed for
//! longer, censored patients with patients who had an event earlier. The raw
//! factor is the patient's pseudo-RMST minus the mean pseudo-RMST of those
//! neighbors, so event patients lean negative (worse than expected) and
//! censored patients lean positive. Raw values are then winsorized and scaled
//! to `[-1, 1]` separately within each (arm, sign) group.

use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{standardize, standardize_column, Cohort, DataError};
use crate::numeric::{quantile_sorted, squared_distance};
use crate::survival::{pseudo_rmst, PseudoOutcome, PseudoScope, SurvivalError, DEFAULT_TAU};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("invalid latent configuration: {0}")]
    InvalidConfig(String),
    #[error("neighbor-set invariant violated for anchor {anchor}: {message}")]
    InvariantViolation { anchor: usize, message: String },
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Anchor had the event; candidates were followed strictly longer.
    LongerSurvivors,
    /// Anchor was censored; candidates had an event strictly earlier.
    EarlierEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub anchor: usize,
    pub neighbors: Vec<usize>,
    pub candidate_count: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    pub k: usize,
    pub include_score: bool,
    pub winsor_quantile: f64,
    pub tau: f64,
    pub pseudo_scope: PseudoScope,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            k: 10,
            include_score: false,
            winsor_quantile: 0.95,
            tau: DEFAULT_TAU,
            pseudo_scope: PseudoScope::FullSample,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        if self.k == 0 {
            return Err(LatentError::InvalidConfig("k must be >= 1".into()));
        }
        check_winsor(self.winsor_quantile)?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(LatentError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

fn check_winsor(q: f64) -> Result<(), LatentError> {
    if q > 0.5 && q <= 1.0 {
        Ok(())
    } else {
        Err(LatentError::InvalidConfig(format!(
            "winsor quantile must lie in (0.5, 1], got {q}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentAssignment {
    pub raw_u: Vec<f64>,
    pub normalized_u: Vec<f64>,
    /// Patients whose candidate set was empty (U = Ũ = 0).
    pub fallback: Vec<bool>,
    pub neighbor_sets: Vec<NeighborSet>,
    pub pseudo: PseudoOutcome,
    pub config: LatentConfig,
}

impl LatentAssignment {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }

    /// CSV with columns `id, raw_u, normalized_u, fallback_flag, neighbor_ids`
    /// (neighbor ids separated by `;`).
    pub fn write_csv<W: Write>(&self, cohort: &Cohort, writer: W) -> csv::Result<()> {
        let ids = cohort.ids();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "id",
            "raw_u",
            "normalized_u",
            "fallback_flag",
            "neighbor_ids",
        ])?;
        for (i, set) in self.neighbor_sets.iter().enumerate() {
            let nb: Vec<&str> = set.neighbors.iter().map(|&j| ids[j]).collect();
            w.write_record([
                ids[i].to_string(),
                self.raw_u[i].to_string(),
                self.normalized_u[i].to_string(),
                u8::from(self.fallback[i]).to_string(),
                nb.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Standardized covariate space (optionally with the standardized prognostic
/// score as one extra coordinate) used for neighbor search.
#[derive(Debug, Clone)]
pub struct NeighborSpace {
    points: Vec<Vec<f64>>,
    times: Vec<f64>,
    events: Vec<bool>,
    treatment: Vec<bool>,
}

impl NeighborSpace {
    pub fn new(
        cohort: &Cohort,
        scores: Option<&[f64]>,
        include_score: bool,
    ) -> Result<Self, LatentError> {
        let mut points = standardize(cohort).covariate_rows();
        if include_score {
            let s = scores.ok_or_else(|| {
                LatentError::InvalidConfig("include_score requires a prognostic score".into())
            })?;
            if s.len() != cohort.len() {
                return Err(LatentError::InvalidConfig(
                    "score length differs from cohort size".into(),
                ));
            }
            for (p, z) in points.iter_mut().zip(standardize_column(s)) {
                p.push(z);
            }
        }
        Ok(Self {
            points,
            times: cohort.times(),
            events: cohort.events(),
            treatment: cohort.treatment(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn direction(&self, i: usize) -> Direction {
        if self.events[i] {
            Direction::LongerSurvivors
        } else {
            Direction::EarlierEvents
        }
    }

    pub fn is_candidate(&self, anchor: usize, j: usize) -> bool {
        j != anchor
            && self.treatment[j] == self.treatment[anchor]
            && match self.direction(anchor) {
                Direction::LongerSurvivors => self.times[j] > self.times[anchor],
                Direction::EarlierEvents => self.events[j] && self.times[j] < self.times[anchor],
            }
    }

    pub fn candidates(&self, anchor: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.is_candidate(anchor, j))
            .collect()
    }

    /// The `k` nearest direction-eligible candidates; distance ties go to the
    /// lower index.
    pub fn nearest(&self, anchor: usize, k: usize) -> NeighborSet {
        let mut cand: Vec<(f64, usize)> = self
            .candidates(anchor)
            .into_iter()
            .map(|j| (squared_distance(&self.points[anchor], &self.points[j]), j))
            .collect();
        let candidate_count = cand.len();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, order);
            cand.truncate(k);
        }
        cand.sort_by(order);
        NeighborSet {
            anchor,
            neighbors: cand.into_iter().map(|(_, j)| j).collect(),
            candidate_count,
            direction: self.direction(anchor),
        }
    }

    /// `k` direction-eligible candidates sampled uniformly without replacement.
    pub fn random(&self, anchor: usize, k: usize, rng: &mut ChaCha8Rng) -> NeighborSet {
        let cand = self.candidates(anchor);
        let mut neighbors: Vec<usize> = cand
            .choose_multiple(rng, k.min(cand.len()))
            .copied()
            .collect();
        neighbors.sort_unstable();
        NeighborSet {
            anchor,
            candidate_count: cand.len(),
            neighbors,
            direction: self.direction(anchor),
        }
    }

    pub fn check(&self, set: &NeighborSet) -> Result<(), LatentError> {
        let violation = |message: String| LatentError::InvariantViolation {
            anchor: set.anchor,
            message,
        };
        if set.direction != self.direction(set.anchor) {
            return Err(violation(
                "direction does not match the anchor's event flag".into(),
            ));
        }
        for &j in &set.neighbors {
            if !self.is_candidate(set.anchor, j) {
                return Err(violation(format!(
                    "patient {j} is not an eligible neighbor"
                )));
            }
        }
        Ok(())
    }
}

/// Directional neighbor set of patient `i` (convenience wrapper building a
/// [`NeighborSpace`] for a single query).
pub fn directional_neighbors(
    cohort: &Cohort,
    scores: Option<&[f64]>,
    i: usize,
    k: usize,
    include_score: bool,
) -> Result<NeighborSet, LatentError> {
    if k == 0 {
        return Err(LatentError::InvalidConfig("k must be >= 1".into()));
    }
    Ok(NeighborSpace::new(cohort, scores, include_score)?.nearest(i, k))
}

/// `U_i = Y_i − mean(Y_j, j ∈ N_i)`, zero for empty sets.
pub fn raw_latent(pseudo: &[f64], sets: &[NeighborSet]) -> Vec<f64> {
    sets.iter()
        .map(|s| {
            if s.neighbors.is_empty() {
                0.0
            } else {
                let m =
                    s.neighbors.iter().map(|&j| pseudo[j]).sum::<f64>() / s.neighbors.len() as f64;
                pseudo[s.anchor] - m
            }
        })
        .collect()
}

/// Signed winsorized scaling to `[-1, 1]`, separately for each (arm, sign)
/// group. The cap is the `winsor_quantile` quantile of the group's nonzero
/// magnitudes.
pub fn normalize_latent(
    raw_u: &[f64],
    treatment: &[bool],
    winsor_quantile: f64,
) -> Result<Vec<f64>, LatentError> {
    check_winsor(winsor_quantile)?;
    if raw_u.len() != treatment.len() {
        return Err(LatentError::InvalidConfig("length mismatch".into()));
    }
    let mut out = vec![0.0; raw_u.len()];
    for arm in [false, true] {
        for positive in [false, true] {
            let members: Vec<usize> = (0..raw_u.len())
                .filter(|&i| treatment[i] == arm && raw_u[i] != 0.0 && (raw_u[i] > 0.0) == positive)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut mags: Vec<f64> = members.iter().map(|&i| raw_u[i].abs()).collect();
            mags.sort_by(f64::total_cmp);
            let cap = quantile_sorted(&mags, winsor_quantile);
            for &i in &members {
                out[i] = raw_u[i].signum() * raw_u[i].abs().min(cap) / cap;
            }
        }
    }
    Ok(out)
}

pub fn compute_latent(
    cohort: &Cohort,
    scores: Option<&[f64]>,
    config: &LatentConfig,
) -> Result<LatentAssignment, LatentError> {
    config.validate()?;
    cohort.require_two_arms()?;
    let pseudo = pseudo_rmst(
        &cohort.times(),
        &cohort.events(),
        &cohort.treatment(),
        config.tau,
        config.pseudo_scope,
    )?;
    let space = NeighborSpace::new(cohort, scores, config.include_score)?;
    let sets: Vec<NeighborSet> = (0..space.len())
        .into_par_iter()
        .map(|i| space.nearest(i, config.k))
        .collect();
    assemble(cohort, &space, sets, pseudo, *config)
}

fn assemble(
    cohort: &Cohort,
    space: &NeighborSpace,
    sets: Vec<NeighborSet>,
    pseudo: PseudoOutcome,
    config: LatentConfig,
) -> Result<LatentAssignment, LatentError> {
    for s in &sets {
        space.check(s)?;
    }
    let raw_u = raw_latent(&pseudo.values, &sets);
    let normalized_u = normalize_latent(&raw_u, &cohort.treatment(), config.winsor_quantile)?;
    let fallback = sets.iter().map(|s| s.neighbors.is_empty()).collect();
    Ok(LatentAssignment {
        raw_u,
        normalized_u,
        fallback,
        neighbor_sets: sets,
        pseudo,
        config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationMode {
    /// Shuffle pseudo-RMST values within each arm, then rebuild Ũ.
    YWithinArm,
    /// Shuffle the finished Ũ within each arm.
    UWithinArm,
    /// Shuffle the finished Ũ across the whole cohort.
    UGlobal,
}

impl std::str::FromStr for PermutationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "y-within-arm" => Ok(Self::YWithinArm),
            "u-within-arm" => Ok(Self::UWithinArm),
            "u-global" => Ok(Self::UGlobal),
            other => Err(format!("unknown permutation mode `{other}`")),
        }
    }
}

fn shuffle_groups(n: usize, groups: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for g in groups {
        let mut shuffled = g.clone();
        shuffled.shuffle(rng);
        for (&dst, &src) in g.iter().zip(&shuffled) {
            perm[dst] = src;
        }
    }
    perm
}

pub fn permute_latent(
    assignment: &LatentAssignment,
    treatment: &[bool],
    mode: PermutationMode,
    seed: u64,
) -> Result<LatentAssignment, LatentError> {
    let n = assignment.normalized_u.len();
    if treatment.len() != n {
        return Err(LatentError::InvalidConfig("length mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arms: Vec<Vec<usize>> = [false, true]
        .iter()
        .map(|&a| (0..n).filter(|&i| treatment[i] == a).collect())
        .collect();
    let mut out = assignment.clone();
    match mode {
        PermutationMode::UWithinArm | PermutationMode::UGlobal => {
            let groups = if mode == PermutationMode::UGlobal {
                vec![(0..n).collect()]
            } else {
                arms
            };
            let perm = shuffle_groups(n, &groups, &mut rng);
            out.normalized_u = perm.iter().map(|&j| assignment.normalized_u[j]).collect();
            out.raw_u = perm.iter().map(|&j| assignment.raw_u[j]).collect();
            out.fallback = perm.iter().map(|&j| assignment.fallback[j]).collect();
        }
        PermutationMode::YWithinArm => {
            let perm = shuffle_groups(n, &arms, &mut rng);
            out.pseudo.values = perm.iter().map(|&j| assignment.pseudo.values[j]).collect();
            out.raw_u = raw_latent(&out.pseudo.values, &out.neighbor_sets);
            out.normalized_u =
                normalize_latent(&out.raw_u, treatment, assignment.config.winsor_quantile)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    /// Ũ = −1 for event patients, +1 for censored patients.
    SignedOutcome,
    /// Signed own pseudo-RMST, normalized without neighbor differencing.
    SignedRmst,
    /// Direction-eligible neighbors drawn at random instead of nearest in X.
    RandomNeighbors,
}

impl std::str::FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signed-outcome" => Ok(Self::SignedOutcome),
            "signed-rmst" => Ok(Self::SignedRmst),
            "random-neighbors" => Ok(Self::RandomNeighbors),
            other => Err(format!("unknown ablation variant `{other}`")),
        }
    }
}

pub fn ablation_latent(
    cohort: &Cohort,
    scores: Option<&[f64]>,
    variant: AblationVariant,
    config: &LatentConfig,
    seed: u64,
) -> Result<LatentAssignment, LatentError> {
    config.validate()?;
    cohort.require_two_arms()?;
    let treatment = cohort.treatment();
    let events = cohort.events();
    let pseudo = pseudo_rmst(
        &cohort.times(),
        &events,
        &treatment,
        config.tau,
        config.pseudo_scope,
    )?;
    let space = NeighborSpace::new(cohort, scores, config.include_score)?;
    let sign = |i: usize| if events[i] { -1.0 } else { 1.0 };
    match variant {
        AblationVariant::SignedOutcome | AblationVariant::SignedRmst => {
            let raw_u: Vec<f64> = (0..cohort.len())
                .map(|i| match variant {
                    AblationVariant::SignedOutcome => sign(i),
                    _ => sign(i) * pseudo.values[i].abs(),
                })
                .collect();
            let normalized_u = if variant == AblationVariant::SignedOutcome {
                raw_u.clone()
            } else {
                normalize_latent(&raw_u, &treatment, config.winsor_quantile)?
            };
            Ok(LatentAssignment {
                raw_u,
                normalized_u,
                fallback: vec![false; cohort.len()],
                neighbor_sets: (0..cohort.len())
                    .map(|i| NeighborSet {
                        anchor: i,
                        neighbors: Vec::new(),
                        candidate_count: 0,
                        direction: space.direction(i),
                    })
                    .collect(),
                pseudo,
                config: *config,
            })
        }
        AblationVariant::RandomNeighbors => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sets = (0..space.len())
                .map(|i| space.random(i, config.k, &mut rng))
                .collect();
            assemble(cohort, &space, sets, pseudo, *config)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;

    fn rec(id: usize, time: f64, event: bool, treatment: bool, x: f64) -> PatientRecord {
        PatientRecord {
            id: format!("p{id}"),
            time,
            event,
            treatment,
            covariates: vec![x],
            external_score: None,
            center: None,
        }
    }

    #[test]
    fn nearest_longer_survivor_wins() {
        // Anchor event at t=2 and x=0; candidates at t=3 (x=0.5) and t=5 (x=0.1).
        let recs = vec![
            rec(0, 2.0, true, false, 0.0),
            rec(1, 3.0, true, false, 0.5),
            rec(2, 5.0, false, false, 0.1),
            rec(3, 1.0, true, false, 0.0),
            rec(4, 4.0, true, true, 0.0),
        ];
        let c = Cohort::new(recs, vec!["x".into()]).unwrap();
        let set = directional_neighbors(&c, None, 0, 1, false).unwrap();
        assert_eq!(set.neighbors, vec![2]);
        assert_eq!(set.candidate_count, 2);
        assert_eq!(set.direction, Direction::LongerSurvivors);
        // k larger than the candidate set returns everything.
        let set = directional_neighbors(&c, None, 0, 10, false).unwrap();
        assert_eq!(set.neighbors, vec![2, 1]);
        // Longest event in its arm has no candidates.
        let set = directional_neighbors(&c, None, 1, 3, false).unwrap();
        assert_eq!(set.neighbors, vec![2]);
        let set = directional_neighbors(&c, None, 2, 3, false).unwrap();
        assert_eq!(set.direction, Direction::EarlierEvents);
        assert_eq!(set.neighbors.len(), 3);
        let set = directional_neighbors(&c, None, 4, 3, false).unwrap();
        assert!(set.neighbors.is_empty());
    }

    #[test]
    fn distance_ties_break_by_index() {
        let recs = vec![
            rec(0, 1.0, true, false, 0.0),
            rec(1, 3.0, true, false, 1.0),
            rec(2, 3.0, true, false, -1.0),
            rec(3, 3.0, true, true, 0.0),
        ];
        let c = Cohort::new(recs, vec!["x".into()]).unwrap();
        assert_eq!(
            directional_neighbors(&c, None, 0, 1, false)
                .unwrap()
                .neighbors,
            vec![1]
        );
    }

    #[test]
    fn raw_latent_examples() {
        let y = [3.0, 2.0, 4.0, 1.0];
        let sets = vec![
            NeighborSet {
                anchor: 0,
                neighbors: vec![1, 2],
                candidate_count: 2,
                direction: Direction::LongerSurvivors,
            },
            NeighborSet {
                anchor: 3,
                neighbors: vec![1, 2],
                candidate_count: 2,
                direction: Direction::LongerSurvivors,
            },
            NeighborSet {
                anchor: 1,
                neighbors: vec![],
                candidate_count: 0,
                direction: Direction::LongerSurvivors,
            },
        ];
        assert_eq!(raw_latent(&y, &sets), vec![0.0, -2.0, 0.0]);
    }

    #[test]
    fn normalization_examples() {
        let raw = [1.0, 2.0, 3.0, 4.0, 100.0, 0.0, -5.0, -5.0];
        let arm = [false; 8];
        let u = normalize_latent(&raw, &arm, 0.95).unwrap();
        let q = 80.8;
        assert!((u[1] - 2.0 / q).abs() < 1e-12);
        assert_eq!(u[4], 1.0);
        assert_eq!(u[5], 0.0);
        assert_eq!(u[6], -1.0);
        assert_eq!(u[7], -1.0);
        // Single-element group maps to ±1; groups are per arm.
        let u = normalize_latent(&[0.3, 0.6], &[false, true], 0.95).unwrap();
        assert_eq!(u, vec![1.0, 1.0]);
        assert!(normalize_latent(&raw, &arm, 0.5).is_err());
        assert!(normalize_latent(&raw, &arm, 1.01).is_err());
    }
}
