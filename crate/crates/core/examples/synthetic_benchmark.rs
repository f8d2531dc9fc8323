//! Confounded synthetic cohorts: compare each balancing method's distance to
//! the true log-HR with and without the latent factor, over several seeds.
//!
//! ```text
//! cargo run --release --example synthetic_benchmark -- [seeds] [n]
//! ```

use survlatent::balancing::Method;
use survlatent::pipeline::{run_grid, Dataset, Experiment, RunConfig};
use survlatent::synthetic::{generate, SynthConfig};

fn main() -> Result<(), survlatent::Error> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);

    let cfg = RunConfig {
        experiment: Experiment::Synthetic,
        ..RunConfig::default()
    };
    let mut wins = [0usize; 3];
    println!("seed  method    |err| x-only  |err| x+u   mean delta");
    for seed in 0..seeds {
        let synth = generate(&SynthConfig {
            n,
            seed,
            ..SynthConfig::default()
        })?;
        let theta = synth.truth.theta;
        let data = Dataset::prepare(
            format!("seed{seed}"),
            synth.cohort,
            &RunConfig {
                seed,
                ..cfg.clone()
            },
        )?;
        let report = run_grid(
            &[data],
            &RunConfig {
                seed,
                ..cfg.clone()
            },
            Some(theta),
        )?;
        for (m, win) in Method::ALL.iter().zip(wins.iter_mut()) {
            let cell = report
                .cells
                .iter()
                .find(|c| c.method == *m)
                .expect("cell per method");
            let (Some(b), Some(a)) = (cell.abs_error_base, cell.abs_error_aug) else {
                println!("{seed:>4}  {m:<9} no paired runs");
                continue;
            };
            *win += usize::from(a.mean < b.mean);
            let d = cell.delta.as_ref().map_or(f64::NAN, |d| d.mean);
            println!(
                "{seed:>4}  {:<9} {:>11.4}  {:>10.4}  {:>+11.4}",
                m.name(),
                b.mean,
                a.mean,
                d
            );
        }
        if !report.failures.is_empty() {
            println!("      ({} failed configurations)", report.failures.len());
        }
    }
    for (m, w) in Method::ALL.iter().zip(wins) {
        println!("{m}: latent factor closer to the truth in {w}/{seeds} seeds");
    }
    Ok(())
}
