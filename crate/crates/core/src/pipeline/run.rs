use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ScoreChoice};
use crate::balancing::{
    balance_table, entropy_balance, iptw_weights, prognostic_match, scalar_reweight, BalanceTarget,
    Method, SmdRow, WeightedCohort,
};
use crate::data::{standardize, Cohort};
use crate::error::Error;
use crate::latent::{
    ablation_latent, compute_latent, permute_latent, LatentAssignment, LatentConfig,
};
use crate::prognostic::{crossfit_score, external_score, ScoreSource};
use crate::survival::{cox_fit, HREstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Balancing on observed covariates and the prognostic score only.
    #[serde(rename = "x-only")]
    XOnly,
    /// Balancing additionally on the latent factor.
    #[serde(rename = "x+u")]
    XLatent,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::XOnly => "x-only",
            Variant::XLatent => "x+u",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x-only" => Ok(Variant::XOnly),
            "x+u" | "x-u" => Ok(Variant::XLatent),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// One hyperparameter configuration. Exactly one of `n_bins`, `moments`,
/// `clip` is set, matching `method`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub method: Method,
    pub k: usize,
    pub include_score: bool,
    pub n_bins: Option<usize>,
    pub moments: Option<u8>,
    pub clip: Option<f64>,
}

impl GridPoint {
    pub fn id(&self) -> String {
        let param = match self.method {
            Method::Matching => format!("bins={}", self.n_bins.unwrap_or_default()),
            Method::Entropy => format!("moments={}", self.moments.unwrap_or_default()),
            Method::Iptw => format!("clip={}", self.clip.unwrap_or_default()),
        };
        format!(
            "{}/k={}/score={}/{}",
            self.method,
            self.k,
            u8::from(self.include_score),
            param
        )
    }

    /// Identifier of the covariate-only configuration, which ignores the
    /// latent-factor axes.
    pub fn base_id(&self) -> String {
        GridPoint {
            k: 0,
            include_score: false,
            ..*self
        }
        .id()
    }
}

/// Cartesian product of the grid axes, method by method.
pub fn expand_grid(cfg: &RunConfig) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let params: Vec<(Option<usize>, Option<u8>, Option<f64>)> = match method {
            Method::Matching => cfg
                .n_bins_grid
                .iter()
                .map(|&b| (Some(b), None, None))
                .collect(),
            Method::Entropy => cfg
                .moments_grid
                .iter()
                .map(|&m| (None, Some(m), None))
                .collect(),
            Method::Iptw => cfg
                .clip_grid
                .iter()
                .map(|&c| (None, None, Some(c)))
                .collect(),
        };
        for (n_bins, moments, clip) in params {
            for &k in &cfg.k_grid {
                for &include_score in &cfg.include_score_grid {
                    out.push(GridPoint {
                        method,
                        k,
                        include_score,
                        n_bins,
                        moments,
                        clip,
                    });
                }
            }
        }
    }
    out
}

/// A cohort with its prognostic score, ready for grid runs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub cohort: Cohort,
    pub scores: Vec<f64>,
    pub score_source: ScoreSource,
}

impl Dataset {
    pub fn prepare(
        name: impl Into<String>,
        cohort: Cohort,
        cfg: &RunConfig,
    ) -> Result<Self, Error> {
        let all_external = cohort.records().iter().all(|r| r.external_score.is_some());
        let assignment = match cfg.score.source {
            ScoreChoice::External => external_score(&cohort)?,
            ScoreChoice::Auto if all_external => external_score(&cohort)?,
            _ => crossfit_score(&cohort, cfg.horizon(), cfg.score.folds, cfg.seed)?,
        };
        Ok(Self {
            name: name.into(),
            cohort,
            scores: assignment.scores,
            score_source: assignment.source,
        })
    }

    /// Restriction to `indices`, carrying the already computed scores.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Self, Error> {
        Ok(Self {
            name: name.into(),
            cohort: self.cohort.subset(indices)?,
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            score_source: self.score_source,
        })
    }

    pub fn cox_include_score(&self, cfg: &RunConfig) -> bool {
        cfg.cox_include_score
            .unwrap_or(self.score_source == ScoreSource::External)
    }
}

pub fn latent_config(cfg: &RunConfig, k: usize, include_score: bool) -> LatentConfig {
    LatentConfig {
        k,
        include_score,
        winsor_quantile: cfg.winsor_quantile,
        tau: cfg.tau,
        pseudo_scope: cfg.pseudo_scope,
    }
}

/// Latent factor for one `(k, include_score)` setting, with the configured
/// ablation or permutation applied.
pub fn latent_for(
    data: &Dataset,
    cfg: &RunConfig,
    k: usize,
    include_score: bool,
) -> Result<LatentAssignment, Error> {
    let lc = latent_config(cfg, k, include_score);
    let axis_seed = cfg
        .seed
        .wrapping_add((k as u64) << 1 | u64::from(include_score));
    let latent = match cfg.ablation {
        Some(v) => ablation_latent(&data.cohort, Some(&data.scores), v, &lc, axis_seed)?,
        None => compute_latent(&data.cohort, Some(&data.scores), &lc)?,
    };
    Ok(match cfg.permutation {
        Some(mode) => permute_latent(&latent, &data.cohort.treatment(), mode, axis_seed)?,
        None => latent,
    })
}

/// Balances `cohort` for one grid point. `latent` is given only for the
/// augmented variant.
pub fn balance(
    cohort: &Cohort,
    scores: &[f64],
    latent: Option<&[f64]>,
    point: &GridPoint,
) -> Result<WeightedCohort, Error> {
    let weighted = match point.method {
        Method::Matching => {
            let matched = prognostic_match(cohort, scores, point.n_bins.unwrap_or(5))?;
            match latent {
                Some(u) => {
                    let aligned: Vec<f64> = matched.source_index.iter().map(|&i| u[i]).collect();
                    scalar_reweight(&matched, &aligned)?
                }
                None => matched,
            }
        }
        Method::Entropy => {
            let moments = point.moments.unwrap_or(2);
            let target = BalanceTarget::build(cohort, Some(scores), latent, moments)?;
            entropy_balance(cohort, &target, moments)?
        }
        Method::Iptw => {
            let target = BalanceTarget::build(cohort, Some(scores), latent, 1)?;
            iptw_weights(
                cohort,
                &target,
                point.clip.unwrap_or(crate::balancing::DEFAULT_CLIP),
            )?
        }
    };
    weighted.validate()?;
    Ok(weighted)
}

/// Weighted Cox fit of survival on treatment and covariates (plus the score
/// when requested). The latent factor is never a design column.
pub fn weighted_cox(
    weighted: &WeightedCohort,
    scores: &[f64],
    include_score: bool,
) -> Result<HREstimate, Error> {
    let c = &weighted.cohort;
    let design: Vec<Vec<f64>> = c
        .records()
        .iter()
        .zip(&weighted.source_index)
        .map(|(r, &src)| {
            let mut row = r.covariates.clone();
            if include_score {
                row.push(scores[src]);
            }
            row
        })
        .collect();
    Ok(cox_fit(
        &design,
        &c.treatment(),
        &c.times(),
        &c.events(),
        &weighted.weights,
    )?)
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub estimate: HREstimate,
    pub weighted: WeightedCohort,
}

/// Score → (latent) → balancing → weighted Cox for one configuration.
pub fn run_single(
    data: &Dataset,
    point: &GridPoint,
    variant: Variant,
    latent: Option<&LatentAssignment>,
    cfg: &RunConfig,
) -> Result<SingleRun, Error> {
    let u = match variant {
        Variant::XOnly => None,
        Variant::XLatent => Some(
            latent
                .ok_or_else(|| Error::Config("augmented variant needs a latent assignment".into()))?
                .normalized_u
                .as_slice(),
        ),
    };
    let weighted = balance(&data.cohort, &data.scores, u, point)?;
    let estimate = weighted_cox(&weighted, &data.scores, data.cox_include_score(cfg))?;
    Ok(SingleRun { estimate, weighted })
}

/// SMD of covariates, score and latent factor before and after balancing.
pub fn smd_diagnostics(data: &Dataset, latent: &[f64], weighted: &WeightedCohort) -> Vec<SmdRow> {
    let x = standardize(&data.cohort).covariate_rows();
    let rows: Vec<Vec<f64>> = x
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.push(data.scores[i]);
            r.push(latent[i]);
            r
        })
        .collect();
    let mut names = data.cohort.feature_names().to_vec();
    names.push("score".into());
    names.push("latent".into());
    balance_table(&names, &rows, &data.cohort.treatment(), weighted)
}

/// Outcome of one (grid point, variant) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub point: GridPoint,
    pub variant: Variant,
    pub result: Result<SingleRun, String>,
}

/// Latent factor for one `(k, include_score)` axis, or why it failed.
pub type AxisLatent = (usize, bool, Result<LatentAssignment, String>);

/// Every grid point under both variants for one dataset, in grid order
/// (covariate-only first). Covariate-only runs are computed once per
/// balancing configuration and shared across the latent-factor axes.
pub fn run_dataset(data: &Dataset, cfg: &RunConfig) -> (Vec<RunOutcome>, Vec<AxisLatent>) {
    let grid = expand_grid(cfg);
    let mut axes: Vec<(usize, bool)> = Vec::new();
    for p in &grid {
        if !axes.contains(&(p.k, p.include_score)) {
            axes.push((p.k, p.include_score));
        }
    }
    let latents: Vec<AxisLatent> = axes
        .par_iter()
        .map(|&(k, inc)| {
            (
                k,
                inc,
                latent_for(data, cfg, k, inc).map_err(|e| e.to_string()),
            )
        })
        .collect();

    let mut base_points: Vec<GridPoint> = Vec::new();
    for p in &grid {
        if !base_points.iter().any(|b| b.base_id() == p.base_id()) {
            base_points.push(*p);
        }
    }
    let base: Vec<(String, Result<SingleRun, String>)> = base_points
        .par_iter()
        .map(|p| {
            (
                p.base_id(),
                run_single(data, p, Variant::XOnly, None, cfg).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let augmented: Vec<Result<SingleRun, String>> =
        grid.par_iter()
            .map(|p| {
                let latent = latents
                    .iter()
                    .find(|(k, inc, _)| *k == p.k && *inc == p.include_score)
                    .map(|(_, _, l)| l)
                    .expect("latent computed for every axis pair");
                match latent {
                    Ok(l) => run_single(data, p, Variant::XLatent, Some(l), cfg)
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                }
            })
            .collect();

    let mut out = Vec::with_capacity(2 * grid.len());
    for (p, aug) in grid.iter().zip(augmented) {
        let b = base
            .iter()
            .find(|(id, _)| *id == p.base_id())
            .map(|(_, r)| r.clone())
            .expect("base run");
        out.push(RunOutcome {
            point: *p,
            variant: Variant::XOnly,
            result: b,
        });
        out.push(RunOutcome {
            point: *p,
            variant: Variant::XLatent,
            result: aug,
        });
    }
    (out, latents)
}
