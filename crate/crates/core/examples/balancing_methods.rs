//! The three balancing strategies on one cohort: matching with the scalar
//! survivor reweight, entropy balancing and clipped inverse probability
//! weighting, each summarized by effective sample size and covariate SMDs.
//!
//! ```text
//! cargo run --release --example balancing_methods
//! ```

use survlatent::balancing::{
    balance_table, entropy_balance, iptw_weights, prognostic_match, scalar_reweight, BalanceTarget,
    WeightedCohort,
};
use survlatent::latent::{compute_latent, LatentConfig};
use survlatent::prognostic::crossfit_score;
use survlatent::synthetic::{generate, SynthConfig};

fn summarize(label: &str, w: &WeightedCohort, target: &BalanceTarget, treatment: &[bool]) {
    let table = balance_table(&target.names, &target.rows, treatment, w);
    let worst = table.iter().map(|r| r.smd_after.abs()).fold(0.0, f64::max);
    println!(
        "{label:<22} n {:>5}  ESS treated {:>7.1}  ESS control {:>7.1}  max |SMD| after {worst:.3}",
        w.cohort.len(),
        w.diagnostics.ess_treated,
        w.diagnostics.ess_control
    );
    for r in &table {
        println!(
            "    {:<10} {:+.3} -> {:+.3}",
            r.feature, r.smd_before, r.smd_after
        );
    }
}

fn main() -> Result<(), survlatent::Error> {
    let cohort = generate(&SynthConfig {
        n: 1500,
        seed: 3,
        ..SynthConfig::default()
    })?
    .cohort;
    let scores = crossfit_score(&cohort, 60.0, 5, 3)?.scores;
    let latent = compute_latent(&cohort, Some(&scores), &LatentConfig::default())?.normalized_u;
    let target = BalanceTarget::build(&cohort, Some(&scores), Some(&latent), 2)?;

    let treatment = cohort.treatment();
    let matched = prognostic_match(&cohort, &scores, 5)?;
    summarize("matching", &matched, &target, &treatment);
    let aligned: Vec<f64> = matched.source_index.iter().map(|&i| latent[i]).collect();
    let reweighted = scalar_reweight(&matched, &aligned)?;
    if let Some(w) = reweighted.diagnostics.scalar_weight {
        println!(
            "    survivor weight {:.3} (clipped {}, degenerate {})",
            w.weight, w.clipped, w.degenerate
        );
    }
    summarize("matching + reweight", &reweighted, &target, &treatment);
    summarize(
        "entropy (2 moments)",
        &entropy_balance(&cohort, &target, 2)?,
        &target,
        &treatment,
    );
    summarize(
        "iptw (clip 0.05)",
        &iptw_weights(&cohort, &target.first_moments(), 0.05)?,
        &target,
        &treatment,
    );
    Ok(())
}
