//! The statistical machinery behind the validation summaries: sign,
//! Wilcoxon and binomial tests on paired improvements, equivalence testing
//! of shifts, and the survival-gap analysis for center pairs.
//!
//! ```text
//! cargo run --example validation_stats
//! ```

use survlatent::stats::{
    benchmark_delta, binomial_test, cell_tests, sign_test, survival_gap_analysis, tost_equivalence,
    wilcoxon_signed_rank, PairSurvival, PairedDelta,
};

fn main() -> Result<(), survlatent::stats::StatsError> {
    // Paired improvement: positive when the augmented estimate is closer.
    let reference = 0.67f64.ln();
    let d = benchmark_delta(-0.10, -0.32, reference);
    println!("delta for base -0.10, augmented -0.32, reference {reference:.3}: {d:+.4}");

    let deltas = [0.12, 0.05, 0.31, 0.02, 0.09, 0.18, 0.07, 0.11, 0.04];
    println!("sign test 9/9: p = {:.9}", sign_test(9, 9)?);
    let w = wilcoxon_signed_rank(&deltas)?;
    println!(
        "wilcoxon W+ = {} (exact {}), p = {:.9}",
        w.w_plus, w.exact, w.p_value
    );
    for (k, n) in [(16, 19), (13, 15), (5, 5)] {
        println!("binomial {k}/{n}: p = {:.5}", binomial_test(k, n, 0.5)?);
    }

    let cells = vec![
        PairedDelta::new("site-a/matching", vec![0.1, 0.2, -0.05, 0.15])?,
        PairedDelta::new("site-b/entropy", vec![0.04, 0.06, 0.02])?,
        PairedDelta::new("site-c/iptw", vec![-0.01, 0.03, 0.05])?,
    ];
    let t = cell_tests(&cells)?;
    if let Some(s) = t.sign {
        println!(
            "{} cells, {}/{} positive, sign p = {:.4}",
            t.cells, s.positive, s.nonzero, s.p_value
        );
    }

    let margin = 1.10f64.ln();
    for (shift, se) in [(0.035, 0.0163), (0.183, 0.0221)] {
        let e = tost_equivalence(shift, se, margin)?;
        println!(
            "shift {shift:.3}: CI [{:.4}, {:.4}] vs ±{margin:.4} -> {}",
            e.ci95.0,
            e.ci95.1,
            if e.equivalent {
                "equivalent"
            } else {
                "not equivalent"
            }
        );
    }

    let pairs = [
        ("a", "b", 0.70, 0.75, 0.70, 0.78, 0.72, 0.75),
        ("a", "c", 0.70, 0.80, 0.69, 0.83, 0.70, 0.82),
        ("b", "c", 0.75, 0.80, 0.74, 0.82, 0.73, 0.84),
        ("c", "d", 0.80, 0.82, 0.80, 0.81, 0.80, 0.80),
    ];
    let pairs: Vec<PairSurvival> = pairs
        .iter()
        .map(|&(first, second, r1, r2, b1, b2, a1, a2)| PairSurvival {
            first: first.into(),
            second: second.into(),
            raw: (r1, r2),
            base: (b1, b2),
            aug: (a1, a2),
        })
        .collect();
    let g = survival_gap_analysis(&pairs)?;
    println!(
        "survival gaps: {} retained, {} reduced, binomial p = {:.4}",
        g.retained, g.fixed, g.p_value
    );
    Ok(())
}
