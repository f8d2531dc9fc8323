//! Permutation and ablation suite: how much of the paired improvement
//! survives when the latent factor's structure is destroyed or replaced by a
//! simpler signal.
//!
//! ```text
//! cargo run --release --example permutation_diagnostics -- [seed]
//! ```

use survlatent::pipeline::{run_diagnostics, Dataset, Experiment, LatentVariant, RunConfig};
use survlatent::synthetic::{generate, SynthConfig};

fn main() -> Result<(), survlatent::Error> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let synth = generate(&SynthConfig {
        n: 1500,
        seed,
        ..SynthConfig::default()
    })?;
    let cfg = RunConfig {
        experiment: Experiment::Synthetic,
        seed,
        ..RunConfig::default()
    };
    let data = Dataset::prepare("synthetic", synth.cohort, &cfg)?;
    let report = run_diagnostics(&[data], &cfg, synth.truth.theta, &LatentVariant::all())?;

    let show = |name: String, d: Option<f64>| {
        println!(
            "{name:<36} mean delta {}",
            d.map_or("n/a".into(), |v| format!("{v:+.4}"))
        )
    };
    show("unmodified".into(), report.unmodified.mean_delta);
    for run in &report.variants {
        let name = run
            .variant
            .map(|v| serde_json::to_string(&v).unwrap_or_default())
            .unwrap_or_default();
        show(name, run.mean_delta);
        for m in &run.by_method {
            if let Some(d) = m.mean_delta {
                println!("    {:<10} {d:+.4}", m.method.name());
            }
        }
    }
    Ok(())
}
