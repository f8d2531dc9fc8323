use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balancing::Method;
use crate::data::Schema;
use crate::error::Error;
use crate::latent::{AblationVariant, PermutationMode};
use crate::prognostic::DEFAULT_FOLDS;
use crate::survival::{PseudoScope, DEFAULT_TAU};
use crate::synthetic::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Paired distance of both variants to a reference log-HR.
    Benchmark,
    /// Shift between variants on randomized data, judged for equivalence.
    RctEquivalence,
    /// Dispersion of per-center log-HRs.
    CrossCenterHr,
    /// Cross-center landmark survival gaps.
    CrossCenterSurvival,
    /// Benchmark against the generator's true log-HR on simulated data.
    Synthetic,
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreChoice {
    /// External column when every patient has one, otherwise cross-fitted.
    #[default]
    Auto,
    External,
    Crossfit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub source: ScoreChoice,
    pub folds: usize,
    /// Event-within-horizon label cut; defaults to `tau`.
    pub horizon: Option<f64>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            source: ScoreChoice::Auto,
            folds: DEFAULT_FOLDS,
            horizon: None,
        }
    }
}

/// Full run configuration, read from JSON. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub schema: Schema,
    pub tau: f64,
    pub pseudo_scope: PseudoScope,
    pub k_grid: Vec<usize>,
    pub include_score_grid: Vec<bool>,
    pub winsor_quantile: f64,
    pub score: ScoreConfig,
    /// Add the prognostic score to the Cox design; defaults to true only for
    /// external scores.
    pub cox_include_score: Option<bool>,
    pub methods: Vec<Method>,
    pub n_bins_grid: Vec<usize>,
    pub moments_grid: Vec<u8>,
    pub clip_grid: Vec<f64>,
    pub experiment: Experiment,
    pub benchmark_log_hr: Option<f64>,
    pub margin: f64,
    pub permutation: Option<PermutationMode>,
    pub ablation: Option<AblationVariant>,
    /// Landmark time of the survival-gap analysis.
    pub landmark: f64,
    /// Standardize covariates within each center before a multicenter run.
    pub per_center_standardization: bool,
    /// Generator settings for the synthetic experiment.
    pub synthetic: Option<SynthConfig>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            schema: Schema::default(),
            tau: DEFAULT_TAU,
            pseudo_scope: PseudoScope::FullSample,
            k_grid: vec![5, 10, 20],
            include_score_grid: vec![false, true],
            winsor_quantile: 0.95,
            score: ScoreConfig::default(),
            cox_include_score: None,
            methods: Method::ALL.to_vec(),
            n_bins_grid: vec![3, 5, 10],
            moments_grid: vec![1, 2],
            clip_grid: vec![0.01, 0.05, 0.10],
            experiment: Experiment::Benchmark,
            benchmark_log_hr: None,
            margin: 1.10f64.ln(),
            permutation: None,
            ablation: None,
            landmark: DEFAULT_TAU,
            per_center_standardization: false,
            synthetic: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn horizon(&self) -> f64 {
        self.score.horizon.unwrap_or(self.tau)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return bad("k_grid must be nonempty with k >= 1");
        }
        if self.include_score_grid.is_empty() {
            return bad("include_score_grid must be nonempty");
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        for m in &self.methods {
            let empty = match m {
                Method::Matching => self.n_bins_grid.is_empty(),
                Method::Entropy => self.moments_grid.is_empty(),
                Method::Iptw => self.clip_grid.is_empty(),
            };
            if empty {
                return Err(Error::Config(format!("grid for method `{m}` is empty")));
            }
        }
        if self.n_bins_grid.contains(&0) {
            return bad("n_bins must be >= 1");
        }
        if self.moments_grid.iter().any(|m| !(1..=2).contains(m)) {
            return bad("moments must be 1 or 2");
        }
        if self.clip_grid.iter().any(|c| !(*c > 0.0 && *c < 0.5)) {
            return bad("clip values must lie in (0, 0.5)");
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.winsor_quantile > 0.5 && self.winsor_quantile <= 1.0) {
            return bad("winsor_quantile must lie in (0.5, 1]");
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.landmark.is_finite() && self.landmark > 0.0) {
            return bad("landmark must be positive");
        }
        if self.score.folds < 2 {
            return bad("score folds must be >= 2");
        }
        match self.experiment {
            Experiment::Benchmark if self.benchmark_log_hr.is_none() => {
                bad("benchmark experiment requires benchmark_log_hr")
            }
            Experiment::Synthetic if self.synthetic.is_none() && self.inputs.is_empty() => {
                bad("synthetic experiment requires a `synthetic` generator block")
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c: RunConfig =
            serde_json::from_str(r#"{"k_grid": [3], "experiment": "rct-equivalence"}"#).unwrap();
        assert_eq!(c.k_grid, vec![3]);
        assert_eq!(c.n_bins_grid, vec![3, 5, 10]);
        assert_eq!(c.experiment, Experiment::RctEquivalence);
        assert!((c.margin - 0.09531).abs() < 1e-5);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_grids() {
        let c = RunConfig {
            experiment: Experiment::RctEquivalence,
            ..RunConfig::default()
        };
        assert!(RunConfig {
            k_grid: vec![],
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            clip_grid: vec![0.6],
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            margin: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig::default().validate().is_err());
        assert_eq!(
            "cross-center-hr".parse::<Experiment>(),
            Ok(Experiment::CrossCenterHr)
        );
    }
}
