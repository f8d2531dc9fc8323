//! Latent prognostic factor on a confounded synthetic cohort: directional
//! neighbor sets, raw and normalized values, and how well the factor tracks
//! the hidden variable the generator used.
//!
//! ```text
//! cargo run --release --example latent_factor -- [k] [latent.csv]
//! ```

use survlatent::latent::{compute_latent, LatentConfig};
use survlatent::numeric::correlation;
use survlatent::synthetic::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let synth = generate(&SynthConfig {
        n: 1500,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let cohort = &synth.cohort;
    let latent = compute_latent(
        cohort,
        None,
        &LatentConfig {
            k,
            ..LatentConfig::default()
        },
    )?;

    let ids = cohort.ids();
    let (times, events) = (cohort.times(), cohort.events());
    for i in 0..4 {
        let set = &latent.neighbor_sets[i];
        println!(
            "{} time {:.1} {}: {:?} among {} candidates, Y {:.2}, U {:+.2}, normalized {:+.3}",
            ids[i],
            times[i],
            if events[i] { "event" } else { "censored" },
            set.direction,
            set.candidate_count,
            latent.pseudo.values[i],
            latent.raw_u[i],
            latent.normalized_u[i]
        );
    }
    println!(
        "{} of {} patients fell back to zero",
        latent.fallback_count(),
        cohort.len()
    );

    let protective: Vec<f64> = synth.hidden_v().iter().map(|v| -v).collect();
    println!(
        "corr(latent, -hidden) = {:.3}",
        correlation(&latent.normalized_u, &protective)
    );
    for (j, name) in cohort.feature_names().iter().enumerate() {
        let col: Vec<f64> = cohort.covariate_rows().iter().map(|r| r[j]).collect();
        println!(
            "corr({name}, hidden) = {:+.3}",
            correlation(&col, synth.hidden_v())
        );
    }
    if let Some(path) = args.next() {
        latent.write_csv(cohort, std::fs::File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
