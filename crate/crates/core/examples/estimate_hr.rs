//! One configuration end to end: cross-fitted prognostic score, latent
//! factor, entropy balancing and the weighted Cox fit, with and without the
//! latent factor among the balancing features.
//!
//! ```text
//! cargo run --release --example estimate_hr -- [cohort.csv]
//! ```

use survlatent::balancing::Method;
use survlatent::data::{load_cohort, Schema};
use survlatent::pipeline::{latent_for, run_single, Dataset, GridPoint, RunConfig, Variant};
use survlatent::synthetic::{generate, SynthConfig};

fn main() -> Result<(), survlatent::Error> {
    let cfg = RunConfig::default();
    let cohort = match std::env::args().nth(1) {
        Some(path) => load_cohort(&path, &Schema::default())?,
        None => {
            generate(&SynthConfig {
                n: 1200,
                seed: 11,
                ..SynthConfig::default()
            })?
            .cohort
        }
    };
    let data = Dataset::prepare("cohort", cohort, &cfg)?;
    println!(
        "{} patients, {} treated, score source {:?}",
        data.cohort.len(),
        data.cohort.n_treated(),
        data.score_source
    );

    let point = GridPoint {
        method: Method::Entropy,
        k: 10,
        include_score: false,
        n_bins: None,
        moments: Some(2),
        clip: None,
    };
    let latent = latent_for(&data, &cfg, point.k, point.include_score)?;
    println!(
        "latent factor: {} patients without directional neighbors",
        latent.fallback_count()
    );
    for variant in [Variant::XOnly, Variant::XLatent] {
        let run = run_single(&data, &point, variant, Some(&latent), &cfg)?;
        let e = &run.estimate;
        println!(
            "{:<7} HR {:.3} [{:.3}, {:.3}]  log HR {:+.4} (SE {:.4})  ESS control {:.1}",
            variant.name(),
            e.hr,
            e.ci95.0.exp(),
            e.ci95.1.exp(),
            e.log_hr,
            e.se,
            run.weighted.diagnostics.ess_control
        );
    }
    Ok(())
}
