use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use survlatent::data::Schema;
use survlatent::error::Error;
use survlatent::latent::{AblationVariant, PermutationMode};
use survlatent::pipeline::{
    emit_report, expand_grid, latent_for, load_datasets, run_diagnostics, run_grid, run_single,
    smd_diagnostics, Experiment, LatentVariant, RunConfig, Variant,
};
use survlatent::synthetic::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "survlatent",
    version,
    about = "Latent-factor adjusted treatment effects for survival data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Input cohort CSV (repeatable).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// JSON column mapping.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    experiment: Option<Experiment>,
    /// Equivalence margin on the log-HR scale.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long = "benchmark-loghr", allow_negative_numbers = true)]
    benchmark_loghr: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    permute: Option<PermutationMode>,
    #[arg(long)]
    ablation: Option<AblationVariant>,
}

#[derive(Subcommand)]
enum Command {
    /// Single configuration: latent factor, balancing and weighted Cox fit.
    Estimate(Common),
    /// Full hyperparameter grid with paired variants and report.
    Grid(Common),
    /// Generate a synthetic cohort with a truth sidecar.
    Synth(Common),
    /// Equivalence of the two variants on randomized data.
    ValidateRct(Common),
    /// Per-center log-HR dispersion or cross-center survival gaps.
    CrossCenter(Common),
    /// Permutation and ablation suite for the latent factor.
    Diagnostics(Common),
}

fn build_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if !c.input.is_empty() {
        cfg.inputs = c.input.clone();
    }
    if let Some(p) = &c.schema {
        cfg.schema =
            Schema::from_json_file(p).map_err(|e| Error::Config(format!("schema: {e}")))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        if let Some(sc) = &mut cfg.synthetic {
            sc.seed = s;
        }
    }
    if let Some(t) = c.tau {
        cfg.tau = t;
    }
    if let Some(e) = c.experiment {
        cfg.experiment = e;
    }
    if let Some(m) = c.margin {
        cfg.margin = m;
    }
    if c.benchmark_loghr.is_some() {
        cfg.benchmark_log_hr = c.benchmark_loghr;
    }
    if c.permute.is_some() {
        cfg.permutation = c.permute;
    }
    if c.ablation.is_some() {
        cfg.ablation = c.ablation;
    }
    Ok(cfg)
}

fn out_dir(c: &Common) -> PathBuf {
    c.out
        .clone()
        .unwrap_or_else(|| PathBuf::from("survlatent-out"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn grid(c: &Common, experiment: Option<Experiment>) -> Result<(), Error> {
    let mut cfg = build_config(c)?;
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    cfg.validate()?;
    let (datasets, reference) = load_datasets(&cfg)?;
    let report = run_grid(&datasets, &cfg, reference)?;
    let manifest = emit_report(&report, &cfg, out_dir(c))?;
    println!(
        "{} rows, {} failures, config {}",
        report.rows.len() + report.survival.len(),
        report.failures.len(),
        &manifest.config_hash[..12]
    );
    if let Some(t) = &report.tests {
        if let Some(s) = t.sign {
            println!(
                "sign test {}/{} p = {:.6}",
                s.positive, s.nonzero, s.p_value
            );
        }
        if let Some(w) = t.wilcoxon {
            println!("wilcoxon p = {:.6}", w.p_value);
        }
    }
    for e in &report.equivalence {
        println!(
            "{} {}: shift {:.4} CI [{:.4}, {:.4}] {}",
            e.dataset,
            e.method,
            e.result.shift,
            e.result.ci95.0,
            e.result.ci95.1,
            if e.result.equivalent {
                "equivalent"
            } else {
                "not equivalent"
            }
        );
    }
    for g in &report.gaps {
        if let Some(a) = &g.analysis {
            println!(
                "{}: {}/{} gaps reduced, p = {:.4}",
                g.method, a.fixed, a.retained, a.p_value
            );
        }
    }
    Ok(())
}

fn estimate(c: &Common) -> Result<(), Error> {
    let mut cfg = build_config(c)?;
    if cfg.experiment == Experiment::Benchmark && cfg.benchmark_log_hr.is_none() {
        cfg.experiment = Experiment::RctEquivalence;
    }
    cfg.validate()?;
    let (datasets, _) = load_datasets(&cfg)?;
    let data = &datasets[0];
    let point = expand_grid(&cfg)[0];
    let latent = latent_for(data, &cfg, point.k, point.include_score)?;
    let variants = match c.variant {
        Some(v) => vec![v],
        None => vec![Variant::XOnly, Variant::XLatent],
    };
    let out = c.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
        latent.write_csv(&data.cohort, std::fs::File::create(dir.join("latent.csv"))?)?;
    }
    for v in variants {
        let run = run_single(data, &point, v, Some(&latent), &cfg)?;
        let e = &run.estimate;
        println!(
            "{} {}: log HR {:.4} (SE {:.4}), HR {:.3} [{:.3}, {:.3}]",
            point.id(),
            v.name(),
            e.log_hr,
            e.se,
            e.hr,
            e.ci95.0.exp(),
            e.ci95.1.exp()
        );
        if let Some(dir) = &out {
            let tag = v.name().replace('+', "_");
            write_json(&dir.join(format!("estimate_{tag}.json")), e)?;
            run.weighted.write_csv(std::fs::File::create(
                dir.join(format!("weights_{tag}.csv")),
            )?)?;
            let mut w = csv::Writer::from_path(dir.join(format!("smd_{tag}.csv")))?;
            for r in smd_diagnostics(data, &latent.normalized_u, &run.weighted) {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn synth(c: &Common) -> Result<(), Error> {
    let mut sc = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::Config(format!("synthetic config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = c.seed {
        sc.seed = s;
    }
    let cohort = generate(&sc)?;
    let dir = out_dir(c);
    let stem = format!("synthetic_{}", sc.seed);
    cohort.save(&dir, &stem)?;
    println!(
        "wrote {} patients ({} treated) to {}",
        cohort.cohort.len(),
        cohort.cohort.n_treated(),
        dir.join(format!("{stem}.csv")).display()
    );
    Ok(())
}

fn diagnostics(c: &Common) -> Result<(), Error> {
    let mut cfg = build_config(c)?;
    let requested: Vec<LatentVariant> = c
        .permute
        .map(LatentVariant::Permutation)
        .into_iter()
        .chain(c.ablation.map(LatentVariant::Ablation))
        .collect();
    let variants = if requested.is_empty() {
        LatentVariant::all()
    } else {
        requested
    };
    cfg.permutation = None;
    cfg.ablation = None;
    if cfg.experiment == Experiment::Benchmark && cfg.benchmark_log_hr.is_none() {
        cfg.experiment = Experiment::Synthetic;
    }
    cfg.validate()?;
    let (datasets, reference) = load_datasets(&cfg)?;
    let reference = reference.ok_or_else(|| {
        Error::Config("diagnostics need --benchmark-loghr or synthetic truth".into())
    })?;
    let report = run_diagnostics(&datasets, &cfg, reference, &variants)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.4}"));
    println!(
        "unmodified: mean delta {}",
        fmt(report.unmodified.mean_delta)
    );
    for r in &report.variants {
        let name = serde_json::to_string(&r.variant).unwrap_or_default();
        println!("{name}: mean delta {}", fmt(r.mean_delta));
    }
    write_json(&out_dir(c).join("diagnostics.json"), &report)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(c) => estimate(c),
        Command::Grid(c) => grid(c, None),
        Command::Synth(c) => synth(c),
        Command::ValidateRct(c) => grid(c, Some(Experiment::RctEquivalence)),
        Command::CrossCenter(c) => {
            let e = match c.experiment {
                Some(Experiment::CrossCenterSurvival) => Experiment::CrossCenterSurvival,
                _ => Experiment::CrossCenterHr,
            };
            grid(c, Some(e))
        }
        Command::Diagnostics(c) => diagnostics(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
