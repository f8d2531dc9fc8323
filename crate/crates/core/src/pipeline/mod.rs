//! Grid runner: every hyperparameter configuration under both variants
//! (covariates only, covariates plus latent factor), aggregated into the
//! validation report of the chosen experiment.

mod config;
mod report;
mod run;

pub use config::{Experiment, RunConfig, ScoreChoice, ScoreConfig};
pub use report::{
    config_hash, emit_report, CellSummary, DispersionRow, EquivalenceCell, FailureRow, GapSummary,
    LatentSummary, Manifest, MeanSe, ResultRow, SmdTable, SurvivalRow, ValidationReport,
};
pub use run::{
    balance, expand_grid, latent_config, latent_for, run_dataset, run_single, smd_diagnostics,
    weighted_cox, AxisLatent, Dataset, GridPoint, RunOutcome, SingleRun, Variant,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancing::{smd, Method};
use crate::data::{load_cohort, standardize_per_center, Cohort};
use crate::error::Error;
use crate::latent::{AblationVariant, LatentAssignment, PermutationMode};
use crate::numeric::{mean, standard_error};
use crate::stats::{
    benchmark_delta, cell_tests, pairwise_dispersion, survival_gap_analysis, tost_equivalence,
    PairSurvival, PairedDelta,
};
use crate::survival::km_fit;
use crate::synthetic::{generate, Truth};

/// Loads (or, for the synthetic experiment, generates) the datasets named by
/// `cfg` and resolves the reference log-HR.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Vec<Dataset>, Option<f64>), Error> {
    let mut reference = cfg.benchmark_log_hr;
    let mut cohorts: Vec<(String, Cohort)> = Vec::new();
    if cfg.inputs.is_empty() {
        match (&cfg.synthetic, cfg.experiment) {
            (Some(sc), _) => {
                let synth = generate(sc)?;
                reference = reference.or(Some(synth.truth.theta));
                cohorts.push((format!("synthetic-{}", sc.seed), synth.cohort));
            }
            _ => return Err(Error::Config("no input cohort given".into())),
        }
    }
    for path in &cfg.inputs {
        let cohort = load_cohort(path, &cfg.schema)?;
        if reference.is_none() && cfg.experiment == Experiment::Synthetic {
            let sidecar = path.with_extension("truth.json");
            if let Ok(text) = std::fs::read_to_string(&sidecar) {
                let truth: Truth = serde_json::from_str(&text)?;
                reference = Some(truth.theta);
            }
        }
        let name = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        cohorts.push((name, cohort));
    }
    let datasets = cohorts
        .into_iter()
        .map(|(name, cohort)| {
            let cohort = if cfg.per_center_standardization {
                standardize_per_center(&cohort)
            } else {
                cohort
            };
            Dataset::prepare(name, cohort, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((datasets, reference))
}

/// Loads the configured data and runs the configured experiment.
pub fn run_configured(cfg: &RunConfig) -> Result<ValidationReport, Error> {
    cfg.validate()?;
    let (datasets, reference) = load_datasets(cfg)?;
    run_grid(&datasets, cfg, reference)
}

/// Runs the full grid for every dataset and aggregates per the experiment.
pub fn run_grid(
    datasets: &[Dataset],
    cfg: &RunConfig,
    reference: Option<f64>,
) -> Result<ValidationReport, Error> {
    if expand_grid(cfg).is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    if datasets.is_empty() {
        return Err(Error::Config("no datasets".into()));
    }
    match cfg.experiment {
        Experiment::Benchmark | Experiment::Synthetic => {
            let reference = reference
                .ok_or_else(|| Error::Config("experiment needs a reference log-HR".into()))?;
            within_cohort(datasets, cfg, Some(reference))
        }
        Experiment::RctEquivalence => within_cohort(datasets, cfg, reference),
        Experiment::CrossCenterHr => cross_center_hr(datasets, cfg, reference),
        Experiment::CrossCenterSurvival => cross_center_survival(datasets, cfg),
    }
}

fn push_outcomes(
    report: &mut ValidationReport,
    dataset: &str,
    outcomes: &[RunOutcome],
    reference: Option<f64>,
) {
    for o in outcomes {
        match &o.result {
            Ok(run) => report.rows.push(ResultRow {
                dataset: dataset.to_string(),
                config_id: o.point.id(),
                method: o.point.method,
                k: o.point.k,
                include_score: o.point.include_score,
                n_bins: o.point.n_bins,
                moments: o.point.moments,
                clip: o.point.clip,
                variant: o.variant,
                log_hr: run.estimate.log_hr,
                se: run.estimate.se,
                n_analyzed: run.weighted.cohort.len(),
                ess_treated: run.weighted.diagnostics.ess_treated,
                ess_control: run.weighted.diagnostics.ess_control,
                ridge_applied: run.estimate.ridge_applied,
                benchmark_error: reference.map(|r| (run.estimate.log_hr - r).abs()),
            }),
            Err(e) => report.failures.push(FailureRow {
                dataset: dataset.to_string(),
                config_id: o.point.id(),
                method: o.point.method,
                variant: o.variant,
                error: e.clone(),
            }),
        }
    }
}

/// `(point, base log-HR, augmented log-HR)` for every point where both
/// variants succeeded.
fn paired(outcomes: &[RunOutcome], method: Method) -> Vec<(GridPoint, f64, f64)> {
    outcomes
        .chunks(2)
        .filter(|c| c[0].point.method == method)
        .filter_map(|c| match (&c[0].result, &c[1].result) {
            (Ok(b), Ok(a)) => Some((c[0].point, b.estimate.log_hr, a.estimate.log_hr)),
            _ => None,
        })
        .collect()
}

fn latent_summaries(report: &mut ValidationReport, data: &Dataset, latents: &[AxisLatent]) {
    let t = data.cohort.treatment();
    let unit = vec![1.0; t.len()];
    for (k, inc, l) in latents {
        report.latent.push(LatentSummary {
            dataset: data.name.clone(),
            k: *k,
            include_score: *inc,
            fallback_count: l.as_ref().ok().map(LatentAssignment::fallback_count),
            smd_across_arms: l
                .as_ref()
                .ok()
                .map(|l| smd(&l.normalized_u, &t, &unit).value),
            error: l.as_ref().err().cloned(),
        });
    }
}

fn smd_tables(
    report: &mut ValidationReport,
    data: &Dataset,
    outcomes: &[RunOutcome],
    latents: &[AxisLatent],
    cfg: &RunConfig,
) {
    for &m in &cfg.methods {
        let Some(first) = outcomes.iter().position(|o| o.point.method == m) else {
            continue;
        };
        let point = outcomes[first].point;
        let Some(Ok(latent)) = latents
            .iter()
            .find(|(k, inc, _)| *k == point.k && *inc == point.include_score)
            .map(|(_, _, l)| l)
        else {
            continue;
        };
        for o in &outcomes[first..first + 2] {
            if let Ok(run) = &o.result {
                report.smd.push(SmdTable {
                    dataset: data.name.clone(),
                    config_id: point.id(),
                    method: m,
                    variant: o.variant,
                    rows: smd_diagnostics(data, &latent.normalized_u, &run.weighted),
                });
            }
        }
    }
}

fn within_cohort(
    datasets: &[Dataset],
    cfg: &RunConfig,
    reference: Option<f64>,
) -> Result<ValidationReport, Error> {
    let mut report = ValidationReport::new(cfg.experiment, reference);
    let runs: Vec<_> = datasets.iter().map(|d| run_dataset(d, cfg)).collect();
    for (data, (outcomes, latents)) in datasets.iter().zip(&runs) {
        push_outcomes(&mut report, &data.name, outcomes, reference);
        latent_summaries(&mut report, data, latents);
        smd_tables(&mut report, data, outcomes, latents, cfg);
        for &m in &cfg.methods {
            let pairs = paired(outcomes, m);
            let base: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let aug: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            let mut cell = CellSummary {
                dataset: data.name.clone(),
                method: m,
                pairs: pairs.len(),
                log_hr_base: MeanSe::of(&base),
                log_hr_aug: MeanSe::of(&aug),
                abs_error_base: None,
                abs_error_aug: None,
                delta: None,
            };
            if let Some(r) = reference {
                let eb: Vec<f64> = base.iter().map(|b| (b - r).abs()).collect();
                let ea: Vec<f64> = aug.iter().map(|a| (a - r).abs()).collect();
                cell.abs_error_base = MeanSe::of(&eb);
                cell.abs_error_aug = MeanSe::of(&ea);
                if cfg.experiment != Experiment::RctEquivalence && !pairs.is_empty() {
                    let deltas = pairs.iter().map(|p| benchmark_delta(p.1, p.2, r)).collect();
                    cell.delta = Some(PairedDelta::new(format!("{}/{m}", data.name), deltas)?);
                }
            }
            if cfg.experiment == Experiment::RctEquivalence && !pairs.is_empty() {
                let shifts: Vec<f64> = pairs.iter().map(|p| p.2 - p.1).collect();
                let abs: Vec<f64> = shifts.iter().map(|s| s.abs()).collect();
                report.equivalence.push(EquivalenceCell {
                    dataset: data.name.clone(),
                    method: m,
                    pairs: pairs.len(),
                    mean_abs_shift: mean(&abs),
                    result: tost_equivalence(mean(&shifts), standard_error(&shifts), cfg.margin)?,
                });
            }
            report.cells.push(cell);
        }
    }
    let deltas: Vec<PairedDelta> = report
        .cells
        .iter()
        .filter_map(|c| c.delta.clone())
        .collect();
    if !deltas.is_empty() {
        report.tests = Some(cell_tests(&deltas)?);
    }
    Ok(report)
}

fn centers_of(data: &Dataset) -> Result<Vec<(String, Vec<usize>)>, Error> {
    let centers = data.cohort.centers();
    if centers.len() < 2 {
        return Err(Error::Config(format!(
            "dataset `{}` needs at least two center labels, found {}",
            data.name,
            centers.len()
        )));
    }
    Ok(centers
        .into_iter()
        .map(|c| {
            let idx = data.cohort.center_indices(&c);
            (c, idx)
        })
        .collect())
}

fn cross_center_hr(
    datasets: &[Dataset],
    cfg: &RunConfig,
    reference: Option<f64>,
) -> Result<ValidationReport, Error> {
    let mut report = ValidationReport::new(cfg.experiment, reference);
    let grid = expand_grid(cfg);
    for data in datasets {
        let centers = centers_of(data)?;
        let subsets: Vec<Dataset> = centers
            .iter()
            .map(|(c, idx)| data.subset(format!("{}:{c}", data.name), idx))
            .collect::<Result<_, _>>()?;
        let runs: Vec<_> = subsets.par_iter().map(|d| run_dataset(d, cfg)).collect();
        for (sub, (outcomes, latents)) in subsets.iter().zip(&runs) {
            push_outcomes(&mut report, &sub.name, outcomes, reference);
            latent_summaries(&mut report, sub, latents);
        }
        // Outcomes share grid order across centers: entries 2g and 2g+1 belong to grid point g.
        let mut per_method: Vec<(Method, Vec<f64>)> =
            cfg.methods.iter().map(|&m| (m, Vec::new())).collect();
        for (g, point) in grid.iter().enumerate() {
            let collect = |offset: usize| -> Option<Vec<f64>> {
                runs.iter()
                    .map(|(o, _)| {
                        o[2 * g + offset]
                            .result
                            .as_ref()
                            .ok()
                            .map(|r| r.estimate.log_hr)
                    })
                    .collect()
            };
            let (Some(base), Some(aug)) = (collect(0), collect(1)) else {
                continue;
            };
            let d_base = pairwise_dispersion(&base)?;
            let d_aug = pairwise_dispersion(&aug)?;
            report.dispersion.push(DispersionRow {
                dataset: data.name.clone(),
                config_id: point.id(),
                method: point.method,
                d_base,
                d_aug,
                delta: d_base - d_aug,
            });
            if let Some((_, v)) = per_method.iter_mut().find(|(m, _)| *m == point.method) {
                v.push(d_base - d_aug);
            }
        }
        for (m, deltas) in per_method {
            let rows: Vec<&DispersionRow> = report
                .dispersion
                .iter()
                .filter(|r| r.dataset == data.name && r.method == m)
                .collect();
            let base: Vec<f64> = rows.iter().map(|r| r.d_base).collect();
            let aug: Vec<f64> = rows.iter().map(|r| r.d_aug).collect();
            report.cells.push(CellSummary {
                dataset: data.name.clone(),
                method: m,
                pairs: deltas.len(),
                log_hr_base: MeanSe::of(&base),
                log_hr_aug: MeanSe::of(&aug),
                abs_error_base: None,
                abs_error_aug: None,
                delta: if deltas.is_empty() {
                    None
                } else {
                    Some(PairedDelta::new(format!("{}/{m}", data.name), deltas)?)
                },
            });
        }
    }
    let deltas: Vec<PairedDelta> = report
        .cells
        .iter()
        .filter_map(|c| c.delta.clone())
        .collect();
    if !deltas.is_empty() {
        report.tests = Some(cell_tests(&deltas)?);
    }
    Ok(report)
}

/// Weighted survival at `landmark` of the patients of one group.
fn group_survival(
    times: &[f64],
    events: &[bool],
    weights: &[f64],
    member: &[bool],
    landmark: f64,
) -> Result<f64, Error> {
    let w: Vec<f64> = weights
        .iter()
        .zip(member)
        .map(|(w, &m)| if m { *w } else { 0.0 })
        .collect();
    Ok(km_fit(times, events, &w)?.value_at(landmark))
}

fn cross_center_survival(datasets: &[Dataset], cfg: &RunConfig) -> Result<ValidationReport, Error> {
    let mut report = ValidationReport::new(cfg.experiment, None);
    let grid = expand_grid(cfg);
    for data in datasets {
        let centers = centers_of(data)?;
        let n = data.cohort.len();
        // Latent factor computed within each center, spliced into cohort order.
        let mut axes: Vec<(usize, bool)> = Vec::new();
        for p in &grid {
            if !axes.contains(&(p.k, p.include_score)) {
                axes.push((p.k, p.include_score));
            }
        }
        let latents: Vec<((usize, bool), SplicedLatent)> = axes
            .par_iter()
            .map(|&(k, inc)| {
                let spliced = || -> Result<Vec<f64>, String> {
                    let mut u = vec![0.0; n];
                    for (c, idx) in &centers {
                        let sub = data
                            .subset(format!("{}:{c}", data.name), idx)
                            .map_err(|e| e.to_string())?;
                        let l = latent_for(&sub, cfg, k, inc)
                            .map_err(|e| format!("center {c}: {e}"))?;
                        for (&i, v) in idx.iter().zip(&l.normalized_u) {
                            u[i] = *v;
                        }
                    }
                    Ok(u)
                };
                ((k, inc), spliced())
            })
            .collect();

        let times = data.cohort.times();
        let events = data.cohort.events();
        let crude: Vec<f64> = centers
            .iter()
            .map(|(_, idx)| {
                let mut member = vec![false; n];
                idx.iter().for_each(|&i| member[i] = true);
                group_survival(&times, &events, &vec![1.0; n], &member, cfg.landmark)
            })
            .collect::<Result<_, _>>()?;

        let mut jobs: Vec<(usize, usize, GridPoint, Variant)> = Vec::new();
        for s in 0..centers.len() {
            for t in 0..centers.len() {
                if s == t {
                    continue;
                }
                for p in &grid {
                    for v in [Variant::XOnly, Variant::XLatent] {
                        jobs.push((s, t, *p, v));
                    }
                }
            }
        }
        let results: Vec<Result<(f64, f64), String>> = jobs
            .par_iter()
            .map(|&(s, t, p, v)| {
                let mut idx: Vec<usize> =
                    centers[s].1.iter().chain(&centers[t].1).copied().collect();
                idx.sort_unstable();
                let pair = data.subset("pair", &idx).map_err(|e| e.to_string())?;
                let is_target: Vec<bool> = idx
                    .iter()
                    .map(|i| centers[t].1.binary_search(i).is_ok())
                    .collect();
                let cohort = pair.cohort.with_treatment(&is_target);
                let u: Option<Vec<f64>> = match v {
                    Variant::XOnly => None,
                    Variant::XLatent => {
                        let full = latents
                            .iter()
                            .find(|(a, _)| *a == (p.k, p.include_score))
                            .map(|(_, r)| r)
                            .expect("latent axis");
                        Some(
                            idx.iter()
                                .map(|&i| full.as_ref().map(|u| u[i]))
                                .collect::<Result<_, _>>()
                                .map_err(|e| e.clone())?,
                        )
                    }
                };
                let w =
                    balance(&cohort, &pair.scores, u.as_deref(), &p).map_err(|e| e.to_string())?;
                let member_t = w.cohort.treatment();
                let member_s: Vec<bool> = member_t.iter().map(|m| !m).collect();
                let (wt, we) = (w.cohort.times(), w.cohort.events());
                let ss = group_survival(&wt, &we, &w.weights, &member_s, cfg.landmark)
                    .map_err(|e| e.to_string())?;
                let st = group_survival(&wt, &we, &w.weights, &member_t, cfg.landmark)
                    .map_err(|e| e.to_string())?;
                Ok((ss, st))
            })
            .collect();

        for (&(s, t, p, v), r) in jobs.iter().zip(&results) {
            match r {
                Ok((ss, st)) => report.survival.push(SurvivalRow {
                    config_id: p.id(),
                    method: p.method,
                    source: centers[s].0.clone(),
                    target: centers[t].0.clone(),
                    variant: v,
                    s_source: *ss,
                    s_target: *st,
                }),
                Err(e) => report.failures.push(FailureRow {
                    dataset: format!("{}:{}->{}", data.name, centers[s].0, centers[t].0),
                    config_id: p.id(),
                    method: p.method,
                    variant: v,
                    error: e.clone(),
                }),
            }
        }

        for &m in &cfg.methods {
            let mut pairs = Vec::new();
            for s in 0..centers.len() {
                for t in 0..centers.len() {
                    if s == t {
                        continue;
                    }
                    let avg = |v: Variant| -> Option<(f64, f64)> {
                        let sel: Vec<&SurvivalRow> = report
                            .survival
                            .iter()
                            .filter(|r| {
                                r.method == m
                                    && r.variant == v
                                    && r.source == centers[s].0
                                    && r.target == centers[t].0
                            })
                            .collect();
                        (!sel.is_empty()).then(|| {
                            let a: Vec<f64> = sel.iter().map(|r| r.s_source).collect();
                            let b: Vec<f64> = sel.iter().map(|r| r.s_target).collect();
                            (mean(&a), mean(&b))
                        })
                    };
                    if let (Some(base), Some(aug)) = (avg(Variant::XOnly), avg(Variant::XLatent)) {
                        pairs.push(PairSurvival {
                            first: centers[s].0.clone(),
                            second: centers[t].0.clone(),
                            raw: (crude[s], crude[t]),
                            base,
                            aug,
                        });
                    }
                }
            }
            let (analysis, error) = match survival_gap_analysis(&pairs) {
                Ok(a) => (Some(a), None),
                Err(e) => (None, Some(e.to_string())),
            };
            report.gaps.push(GapSummary {
                method: m,
                analysis,
                error,
            });
        }
    }
    Ok(report)
}

/// Center-wise latent factor spliced back into cohort order.
type SplicedLatent = Result<Vec<f64>, String>;

/// A permutation or ablation setting of the latent factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentVariant {
    Permutation(PermutationMode),
    Ablation(AblationVariant),
}

impl LatentVariant {
    pub fn all() -> Vec<Self> {
        let mut v: Vec<Self> = [
            PermutationMode::YWithinArm,
            PermutationMode::UWithinArm,
            PermutationMode::UGlobal,
        ]
        .into_iter()
        .map(Self::Permutation)
        .collect();
        v.extend(
            [
                AblationVariant::SignedOutcome,
                AblationVariant::SignedRmst,
                AblationVariant::RandomNeighbors,
            ]
            .into_iter()
            .map(Self::Ablation),
        );
        v
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            LatentVariant::Permutation(p) => c.permutation = Some(p),
            LatentVariant::Ablation(a) => c.ablation = Some(a),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDelta {
    pub method: Method,
    pub mean_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRun {
    pub variant: Option<LatentVariant>,
    pub mean_delta: Option<f64>,
    pub by_method: Vec<MethodDelta>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub reference_log_hr: f64,
    pub unmodified: DiagnosticRun,
    pub variants: Vec<DiagnosticRun>,
}

fn summarize(report: &ValidationReport, variant: Option<LatentVariant>) -> DiagnosticRun {
    let by_method = Method::ALL
        .into_iter()
        .filter_map(|m| {
            let v: Vec<f64> = report
                .cells
                .iter()
                .filter(|c| c.method == m)
                .filter_map(|c| c.delta.as_ref().map(|d| d.mean))
                .collect();
            report
                .cells
                .iter()
                .any(|c| c.method == m)
                .then(|| MethodDelta {
                    method: m,
                    mean_delta: (!v.is_empty()).then(|| mean(&v)),
                })
        })
        .collect();
    DiagnosticRun {
        variant,
        mean_delta: report.mean_cell_delta(),
        by_method,
        failures: report.failures.len(),
    }
}

/// Benchmark grid with the unmodified latent factor and with each requested
/// permutation or ablation, summarized by mean paired improvement.
pub fn run_diagnostics(
    datasets: &[Dataset],
    cfg: &RunConfig,
    reference: f64,
    variants: &[LatentVariant],
) -> Result<DiagnosticsReport, Error> {
    let base_cfg = RunConfig {
        experiment: Experiment::Benchmark,
        permutation: None,
        ablation: None,
        ..cfg.clone()
    };
    let unmodified = summarize(&run_grid(datasets, &base_cfg, Some(reference))?, None);
    let variants = variants
        .iter()
        .map(|v| {
            Ok(summarize(
                &run_grid(datasets, &v.apply(&base_cfg), Some(reference))?,
                Some(*v),
            ))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(DiagnosticsReport {
        reference_log_hr: reference,
        unmodified,
        variants,
    })
}
