//! Validation statistics: paired benchmark deltas, exact sign and binomial
//! tests, the Wilcoxon signed-rank test, equivalence by confidence interval,
//! pairwise dispersion of center effects and the cross-center survival-gap
//! classification.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use thiserror::Error;

use crate::numeric::{mean, median, standard_error};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no informative (nonzero) observations")]
    ZeroInformative,
    #[error("no center pair satisfies the retention rule")]
    NoEligiblePairs,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Largest `n` for which tails are summed in exact integer arithmetic.
pub const EXACT_BINOMIAL_MAX_N: u64 = 64;
/// Largest `n` for which the Wilcoxon null distribution is enumerated exactly.
pub const EXACT_WILCOXON_MAX_N: usize = 25;
pub const Z95: f64 = 1.96;

/// Improvement in distance to the benchmark on the log-HR scale; positive
/// when the augmented estimate is closer.
pub fn benchmark_delta(log_hr_base: f64, log_hr_aug: f64, log_hr_reference: f64) -> f64 {
    (log_hr_base - log_hr_reference).abs() - (log_hr_aug - log_hr_reference).abs()
}

fn binomial_coefficients(n: u64) -> Vec<u128> {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for j in 1..row.len() {
            next[j] = row[j - 1] + row[j];
        }
        row = next;
    }
    row
}

/// Upper tail `P(X ≥ k)` for `X ~ Binomial(n, p0)`.
pub fn binomial_test(k: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::InvalidInput(format!(
            "need 0 <= k <= n and n >= 1, got k={k}, n={n}"
        )));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(StatsError::InvalidInput(format!(
            "p0 must lie in [0, 1], got {p0}"
        )));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p0 == 0.5 && n <= EXACT_BINOMIAL_MAX_N {
        let c = binomial_coefficients(n);
        let tail: u128 = c[k as usize..].iter().sum();
        return Ok(tail as f64 / 2f64.powi(n as i32));
    }
    if p0 == 0.0 {
        return Ok(0.0);
    }
    if p0 == 1.0 {
        return Ok(1.0);
    }
    let tail: f64 = (k..=n)
        .map(|j| (ln_binomial(n, j) + j as f64 * p0.ln() + (n - j) as f64 * (1.0 - p0).ln()).exp())
        .sum();
    Ok(tail.min(1.0))
}

/// One-sided exact sign test: `P(X ≥ successes)` under `Binomial(n, 1/2)`.
pub fn sign_test(successes: u64, n_nonzero: u64) -> Result<f64, StatsError> {
    if n_nonzero == 0 {
        return Err(StatsError::ZeroInformative);
    }
    binomial_test(successes, n_nonzero, 0.5)
}

/// Sign test on raw deltas; zeros are dropped.
pub fn sign_test_deltas(deltas: &[f64]) -> Result<SignTest, StatsError> {
    let positive = deltas.iter().filter(|&&d| d > 0.0).count() as u64;
    let nonzero = deltas.iter().filter(|&&d| d != 0.0).count() as u64;
    Ok(SignTest {
        positive,
        nonzero,
        p_value: sign_test(positive, nonzero)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub positive: u64,
    pub nonzero: u64,
    pub p_value: f64,
}

/// Average ranks of `|values|`, doubled so that ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged, times two.
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonTest {
    pub n: usize,
    /// Sum of ranks of the positive deltas.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// One-sided Wilcoxon signed-rank test against the alternative that deltas
/// tend to be positive. Zeros are dropped and tied magnitudes get average
/// ranks.
pub fn wilcoxon_signed_rank(deltas: &[f64]) -> Result<WilcoxonTest, StatsError> {
    if deltas.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite delta".into()));
    }
    let nz: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Err(StatsError::ZeroInformative);
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;
    if n <= EXACT_WILCOXON_MAX_N {
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        for &r in &ranks {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let tail: u64 = counts[w2 as usize..].iter().sum();
        return Ok(WilcoxonTest {
            n,
            w_plus,
            p_value: tail as f64 / 2f64.powi(n as i32),
            exact: true,
        });
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mu - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonTest {
        n,
        w_plus,
        p_value: 1.0 - normal.cdf(z),
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub shift: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub margin: f64,
    pub equivalent: bool,
}

/// Equivalence holds when `shift ± 1.96·se` lies strictly inside
/// `(−margin, margin)`.
pub fn tost_equivalence(shift: f64, se: f64, margin: f64) -> Result<Equivalence, StatsError> {
    if !(se.is_finite() && se >= 0.0) || !shift.is_finite() {
        return Err(StatsError::InvalidInput(format!("shift {shift}, se {se}")));
    }
    if !(margin.is_finite() && margin > 0.0) {
        return Err(StatsError::InvalidInput(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let ci95 = (shift - Z95 * se, shift + Z95 * se);
    Ok(Equivalence {
        shift,
        se,
        ci95,
        margin,
        equivalent: ci95.0 > -margin && ci95.1 < margin,
    })
}

/// Mean absolute difference over all pairs of center log-HRs.
pub fn pairwise_dispersion(log_hrs: &[f64]) -> Result<f64, StatsError> {
    let c = log_hrs.len();
    if c < 2 {
        return Err(StatsError::InvalidInput(format!(
            "need at least 2 centers, got {c}"
        )));
    }
    if log_hrs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite log-HR".into()));
    }
    let mut total = 0.0;
    for i in 0..c {
        for j in i + 1..c {
            total += (log_hrs[i] - log_hrs[j]).abs();
        }
    }
    Ok(total / (c * (c - 1) / 2) as f64)
}

/// Per-cell summary of paired deltas across configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub cell: String,
    pub deltas: Vec<f64>,
    pub mean: f64,
    pub se: f64,
}

impl PairedDelta {
    pub fn new(cell: impl Into<String>, deltas: Vec<f64>) -> Result<Self, StatsError> {
        if deltas.is_empty() || deltas.iter().any(|d| !d.is_finite()) {
            return Err(StatsError::InvalidInput(
                "deltas must be finite and nonempty".into(),
            ));
        }
        Ok(Self {
            cell: cell.into(),
            mean: mean(&deltas),
            se: standard_error(&deltas),
            deltas,
        })
    }
}

/// Sign test, Wilcoxon test and effect-size summary over cell means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTests {
    pub cells: usize,
    pub sign: Option<SignTest>,
    pub wilcoxon: Option<WilcoxonTest>,
    pub mean_delta: f64,
    pub median_delta: f64,
}

pub fn cell_tests(cells: &[PairedDelta]) -> Result<CellTests, StatsError> {
    if cells.is_empty() {
        return Err(StatsError::InvalidInput("no cells".into()));
    }
    let means: Vec<f64> = cells.iter().map(|c| c.mean).collect();
    Ok(CellTests {
        cells: cells.len(),
        sign: sign_test_deltas(&means).ok(),
        wilcoxon: wilcoxon_signed_rank(&means).ok(),
        mean_delta: mean(&means),
        median_delta: median(&means),
    })
}

/// Weighted 5-year (or other landmark) survival of the two centers of a pair
/// under the three adjustments. Each tuple is `(first, second)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSurvival {
    pub first: String,
    pub second: String,
    pub raw: (f64, f64),
    pub base: (f64, f64),
    pub aug: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    /// Center with the lower crude survival.
    pub a: String,
    pub b: String,
    pub d_raw: f64,
    pub d_base: f64,
    pub d_aug: f64,
    pub ordering_preserved: bool,
    pub widened_by_x: bool,
    pub fixed_by_u: bool,
}

impl GapRecord {
    pub fn from_pair(p: &PairSurvival) -> Self {
        let swap = p.raw.1 < p.raw.0;
        let orient = |v: (f64, f64)| if swap { (v.1, v.0) } else { v };
        let (raw, base, aug) = (orient(p.raw), orient(p.base), orient(p.aug));
        let (a, b) = if swap {
            (p.second.clone(), p.first.clone())
        } else {
            (p.first.clone(), p.second.clone())
        };
        let d_raw = raw.1 - raw.0;
        let d_base = base.1 - base.0;
        let d_aug = aug.1 - aug.0;
        Self {
            a,
            b,
            d_raw,
            d_base,
            d_aug,
            ordering_preserved: d_base > 0.0,
            widened_by_x: d_base > d_raw,
            fixed_by_u: d_aug < d_base,
        }
    }

    pub fn retained(&self) -> bool {
        self.ordering_preserved && self.widened_by_x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapAnalysis {
    pub records: Vec<GapRecord>,
    pub retained: u64,
    pub fixed: u64,
    pub p_value: f64,
}

impl GapAnalysis {
    pub fn fixed_fraction(&self) -> f64 {
        self.fixed as f64 / self.retained as f64
    }
}

/// Classifies center pairs and tests whether the latent factor shrinks the
/// covariate-adjusted gap more often than not.
pub fn survival_gap_analysis(pairs: &[PairSurvival]) -> Result<GapAnalysis, StatsError> {
    let records: Vec<GapRecord> = pairs.iter().map(GapRecord::from_pair).collect();
    let retained = records.iter().filter(|r| r.retained()).count() as u64;
    let fixed = records
        .iter()
        .filter(|r| r.retained() && r.fixed_by_u)
        .count() as u64;
    if retained == 0 {
        return Err(StatsError::NoEligiblePairs);
    }
    Ok(GapAnalysis {
        p_value: binomial_test(fixed, retained, 0.5)?,
        records,
        retained,
        fixed,
    })
}
