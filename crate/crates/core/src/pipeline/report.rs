use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Experiment, RunConfig};
use super::run::Variant;
use crate::balancing::{Method, SmdRow};
use crate::error::Error;
use crate::stats::{CellTests, Equivalence, GapAnalysis, PairedDelta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub config_id: String,
    pub method: Method,
    pub k: usize,
    pub include_score: bool,
    pub n_bins: Option<usize>,
    pub moments: Option<u8>,
    pub clip: Option<f64>,
    pub variant: Variant,
    pub log_hr: f64,
    pub se: f64,
    pub n_analyzed: usize,
    pub ess_treated: f64,
    pub ess_control: f64,
    pub ridge_applied: bool,
    /// `|log_hr − reference|` when a reference log-HR exists.
    pub benchmark_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub dataset: String,
    pub config_id: String,
    pub method: Method,
    pub variant: Variant,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            mean: crate::numeric::mean(values),
            se: crate::numeric::standard_error(values),
        })
    }
}

/// Summary of one dataset × method cell over its paired configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub method: Method,
    pub pairs: usize,
    /// Mean log-HR per variant; mean pairwise dispersion in cross-center
    /// experiments.
    pub log_hr_base: Option<MeanSe>,
    pub log_hr_aug: Option<MeanSe>,
    pub abs_error_base: Option<MeanSe>,
    pub abs_error_aug: Option<MeanSe>,
    /// Paired improvement per configuration (benchmark experiments) or
    /// dispersion reduction (cross-center experiments).
    pub delta: Option<PairedDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCell {
    pub dataset: String,
    pub method: Method,
    pub pairs: usize,
    pub mean_abs_shift: f64,
    pub result: Equivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRow {
    pub dataset: String,
    pub config_id: String,
    pub method: Method,
    pub d_base: f64,
    pub d_aug: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub config_id: String,
    pub method: Method,
    pub source: String,
    pub target: String,
    pub variant: Variant,
    pub s_source: f64,
    pub s_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub method: Method,
    pub analysis: Option<GapAnalysis>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdTable {
    pub dataset: String,
    pub config_id: String,
    pub method: Method,
    pub variant: Variant,
    pub rows: Vec<SmdRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub dataset: String,
    pub k: usize,
    pub include_score: bool,
    pub fallback_count: Option<usize>,
    /// Unweighted SMD of the latent factor between arms.
    pub smd_across_arms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub experiment: Experiment,
    pub reference_log_hr: Option<f64>,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    pub cells: Vec<CellSummary>,
    pub tests: Option<CellTests>,
    pub equivalence: Vec<EquivalenceCell>,
    pub dispersion: Vec<DispersionRow>,
    pub survival: Vec<SurvivalRow>,
    pub gaps: Vec<GapSummary>,
    pub smd: Vec<SmdTable>,
    pub latent: Vec<LatentSummary>,
}

impl ValidationReport {
    pub fn new(experiment: Experiment, reference_log_hr: Option<f64>) -> Self {
        Self {
            experiment,
            reference_log_hr,
            rows: Vec::new(),
            failures: Vec::new(),
            cells: Vec::new(),
            tests: None,
            equivalence: Vec::new(),
            dispersion: Vec::new(),
            survival: Vec::new(),
            gaps: Vec::new(),
            smd: Vec::new(),
            latent: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.survival.is_empty()
    }

    /// Mean of the per-cell mean deltas (benchmark improvement or dispersion
    /// reduction) over all cells that have one.
    pub fn mean_cell_delta(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .cells
            .iter()
            .filter_map(|c| c.delta.as_ref().map(|d| d.mean))
            .collect();
        (!v.is_empty()).then(|| crate::numeric::mean(&v))
    }

    pub fn cell(&self, dataset: &str, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub experiment: Experiment,
    pub package: String,
    pub version: String,
    pub files: Vec<String>,
}

/// SHA-256 of the canonical JSON serialization of `cfg`.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn table_files(report: &ValidationReport) -> Result<Vec<(String, Vec<u8>)>, Error> {
    let mut files = Vec::new();
    files.push((
        "tables/configurations.csv".to_string(),
        csv_bytes(&report.rows)?,
    ));
    files.push((
        "tables/failures.csv".to_string(),
        csv_bytes(&report.failures)?,
    ));

    #[derive(Serialize)]
    struct CellCsv<'a> {
        dataset: &'a str,
        method: Method,
        pairs: usize,
        mean_log_hr_base: String,
        mean_log_hr_aug: String,
        mean_abs_error_base: String,
        mean_abs_error_aug: String,
        mean_delta: String,
        se_delta: String,
    }
    let cells: Vec<CellCsv> = report
        .cells
        .iter()
        .map(|c| CellCsv {
            dataset: &c.dataset,
            method: c.method,
            pairs: c.pairs,
            mean_log_hr_base: opt(c.log_hr_base.map(|m| m.mean)),
            mean_log_hr_aug: opt(c.log_hr_aug.map(|m| m.mean)),
            mean_abs_error_base: opt(c.abs_error_base.map(|m| m.mean)),
            mean_abs_error_aug: opt(c.abs_error_aug.map(|m| m.mean)),
            mean_delta: opt(c.delta.as_ref().map(|d| d.mean)),
            se_delta: opt(c.delta.as_ref().map(|d| d.se)),
        })
        .collect();
    files.push(("tables/cells.csv".to_string(), csv_bytes(&cells)?));

    #[derive(Serialize)]
    struct StatCsv {
        statistic: String,
        value: String,
    }
    let mut stats = Vec::new();
    if let Some(t) = &report.tests {
        stats.push(StatCsv {
            statistic: "cells".into(),
            value: t.cells.to_string(),
        });
        if let Some(s) = t.sign {
            stats.push(StatCsv {
                statistic: "positive cells".into(),
                value: format!("{} / {}", s.positive, s.nonzero),
            });
            stats.push(StatCsv {
                statistic: "sign test p (one-sided)".into(),
                value: s.p_value.to_string(),
            });
        }
        if let Some(w) = t.wilcoxon {
            stats.push(StatCsv {
                statistic: "wilcoxon signed-rank p (one-sided)".into(),
                value: w.p_value.to_string(),
            });
        }
        stats.push(StatCsv {
            statistic: "mean cell delta".into(),
            value: t.mean_delta.to_string(),
        });
        stats.push(StatCsv {
            statistic: "median cell delta".into(),
            value: t.median_delta.to_string(),
        });
    }
    stats.push(StatCsv {
        statistic: "failed configurations".into(),
        value: report.failures.len().to_string(),
    });
    files.push(("tables/tests.csv".to_string(), csv_bytes(&stats)?));

    #[derive(Serialize)]
    struct EqCsv<'a> {
        dataset: &'a str,
        method: Method,
        pairs: usize,
        mean_shift: f64,
        se: f64,
        ci_low: f64,
        ci_high: f64,
        margin: f64,
        equivalent: bool,
        mean_abs_shift: f64,
    }
    let eq: Vec<EqCsv> = report
        .equivalence
        .iter()
        .map(|e| EqCsv {
            dataset: &e.dataset,
            method: e.method,
            pairs: e.pairs,
            mean_shift: e.result.shift,
            se: e.result.se,
            ci_low: e.result.ci95.0,
            ci_high: e.result.ci95.1,
            margin: e.result.margin,
            equivalent: e.result.equivalent,
            mean_abs_shift: e.mean_abs_shift,
        })
        .collect();
    files.push(("tables/equivalence.csv".to_string(), csv_bytes(&eq)?));
    files.push((
        "tables/dispersion.csv".to_string(),
        csv_bytes(&report.dispersion)?,
    ));
    files.push((
        "tables/survival.csv".to_string(),
        csv_bytes(&report.survival)?,
    ));

    #[derive(Serialize)]
    struct GapCsv {
        method: Method,
        center_a: String,
        center_b: String,
        d_raw: f64,
        d_base: f64,
        d_aug: f64,
        retained: bool,
        fixed: bool,
    }
    #[derive(Serialize)]
    struct GapTestCsv {
        method: Method,
        fixed: String,
        retained: String,
        p_value: String,
        error: String,
    }
    let mut gap_rows = Vec::new();
    let mut gap_tests = Vec::new();
    for g in &report.gaps {
        if let Some(a) = &g.analysis {
            for r in &a.records {
                gap_rows.push(GapCsv {
                    method: g.method,
                    center_a: r.a.clone(),
                    center_b: r.b.clone(),
                    d_raw: r.d_raw,
                    d_base: r.d_base,
                    d_aug: r.d_aug,
                    retained: r.retained(),
                    fixed: r.retained() && r.fixed_by_u,
                });
            }
        }
        gap_tests.push(GapTestCsv {
            method: g.method,
            fixed: g
                .analysis
                .as_ref()
                .map(|a| a.fixed.to_string())
                .unwrap_or_default(),
            retained: g
                .analysis
                .as_ref()
                .map(|a| a.retained.to_string())
                .unwrap_or_default(),
            p_value: opt(g.analysis.as_ref().map(|a| a.p_value)),
            error: g.error.clone().unwrap_or_default(),
        });
    }
    files.push(("tables/gaps.csv".to_string(), csv_bytes(&gap_rows)?));
    files.push(("tables/gap_tests.csv".to_string(), csv_bytes(&gap_tests)?));

    #[derive(Serialize)]
    struct SmdCsv<'a> {
        dataset: &'a str,
        config_id: &'a str,
        method: Method,
        variant: Variant,
        feature: &'a str,
        smd_before: f64,
        smd_after: f64,
    }
    let smd: Vec<SmdCsv> = report
        .smd
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |r| SmdCsv {
                dataset: &t.dataset,
                config_id: &t.config_id,
                method: t.method,
                variant: t.variant,
                feature: &r.feature,
                smd_before: r.smd_before,
                smd_after: r.smd_after,
            })
        })
        .collect();
    files.push(("tables/smd.csv".to_string(), csv_bytes(&smd)?));
    files.push(("tables/latent.csv".to_string(), csv_bytes(&report.latent)?));

    // Plot data: mean ± SE of log-HR and benchmark error by method and variant.
    #[derive(Serialize)]
    struct PlotCsv {
        method: Method,
        variant: Variant,
        n: usize,
        mean_log_hr: f64,
        se_log_hr: f64,
        mean_abs_error: String,
        se_abs_error: String,
    }
    let mut plot = Vec::new();
    for m in Method::ALL {
        for v in [Variant::XOnly, Variant::XLatent] {
            let sel: Vec<&ResultRow> = report
                .rows
                .iter()
                .filter(|r| r.method == m && r.variant == v)
                .collect();
            let lh: Vec<f64> = sel.iter().map(|r| r.log_hr).collect();
            let err: Vec<f64> = sel.iter().filter_map(|r| r.benchmark_error).collect();
            if let Some(s) = MeanSe::of(&lh) {
                let e = MeanSe::of(&err);
                plot.push(PlotCsv {
                    method: m,
                    variant: v,
                    n: lh.len(),
                    mean_log_hr: s.mean,
                    se_log_hr: s.se,
                    mean_abs_error: opt(e.map(|e| e.mean)),
                    se_abs_error: opt(e.map(|e| e.se)),
                });
            }
        }
    }
    files.push((
        "plotdata/log_hr_by_method.csv".to_string(),
        csv_bytes(&plot)?,
    ));

    #[derive(Serialize)]
    struct DeltaPlot<'a> {
        dataset: &'a str,
        method: Method,
        mean_delta: f64,
        se_delta: f64,
    }
    let deltas: Vec<DeltaPlot> = report
        .cells
        .iter()
        .filter_map(|c| {
            c.delta.as_ref().map(|d| DeltaPlot {
                dataset: &c.dataset,
                method: c.method,
                mean_delta: d.mean,
                se_delta: d.se,
            })
        })
        .collect();
    files.push(("plotdata/cell_deltas.csv".to_string(), csv_bytes(&deltas)?));
    files.push(("plotdata/smd.csv".to_string(), csv_bytes(&smd)?));
    Ok(files)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp: PathBuf = path.with_extension("tmp-write");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `report.json`, `tables/*.csv`, `plotdata/*.csv` and
/// `manifest.json` under `out_dir`. Each file is written to a temporary name
/// and renamed into place. An empty report is refused before anything is
/// written.
pub fn emit_report(
    report: &ValidationReport,
    cfg: &RunConfig,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest, Error> {
    if report.is_empty() {
        return Err(Error::EmptyReport("no successful configuration".into()));
    }
    let out = out_dir.as_ref();
    let mut files = vec![(
        "report.json".to_string(),
        serde_json::to_vec_pretty(report)?,
    )];
    files.extend(table_files(report)?);
    let manifest = Manifest {
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        experiment: report.experiment,
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: files.iter().map(|(name, _)| name.clone()).collect(),
    };
    files.push((
        "manifest.json".to_string(),
        serde_json::to_vec_pretty(&manifest)?,
    ));
    for (name, bytes) in &files {
        write_atomic(&out.join(name), bytes)?;
    }
    Ok(manifest)
}
