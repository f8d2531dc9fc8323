//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use survlatent::data::{Cohort, PatientRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cohort_from(
    times: &[f64],
    events: &[bool],
    treatment: &[bool],
    covariates: &[Vec<f64>],
) -> Cohort {
    let d = covariates.first().map_or(0, Vec::len);
    let records = (0..times.len())
        .map(|i| PatientRecord {
            id: format!("p{i:03}"),
            time: times[i],
            event: events[i],
            treatment: treatment[i],
            covariates: covariates[i].clone(),
            external_score: None,
            center: None,
        })
        .collect();
    Cohort::new(records, (0..d).map(|j| format!("x{j}")).collect()).expect("valid cohort")
}

/// Product-limit curve evaluated step by step, then integrated on `[0, tau]`
/// with the last value carried forward.
pub fn naive_rmst(times: &[f64], events: &[bool], tau: f64) -> f64 {
    let mut distinct: Vec<f64> = times.iter().copied().filter(|&t| t <= tau).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut surv = 1.0;
    let mut area = 0.0;
    let mut last = 0.0;
    for &t in &distinct {
        area += surv * (t - last);
        last = t;
        let at_risk = times.iter().filter(|&&s| s >= t).count() as f64;
        let deaths = times
            .iter()
            .zip(events)
            .filter(|(&s, &e)| s == t && e)
            .count() as f64;
        if at_risk > 0.0 {
            surv *= 1.0 - deaths / at_risk;
        }
    }
    area + surv * (tau - last)
}

/// Weighted Efron log partial likelihood written directly from the risk-set
/// definition: for each distinct event time, the risk set is everyone still
/// under observation and the tied events are peeled off in equal fractions.
pub fn efron_loglik(
    design: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    weights: &[f64],
    beta: &[f64],
) -> f64 {
    let eta: Vec<f64> = design
        .iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let mut event_times: Vec<f64> = (0..times.len())
        .filter(|&i| events[i] && weights[i] > 0.0)
        .map(|i| times[i])
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let mut ll = 0.0;
    for &t in &event_times {
        let tied: Vec<usize> = (0..times.len())
            .filter(|&i| times[i] == t && events[i] && weights[i] > 0.0)
            .collect();
        let d = tied.len() as f64;
        let risk: f64 = (0..times.len())
            .filter(|&j| times[j] >= t)
            .map(|j| weights[j] * eta[j].exp())
            .sum();
        let tied_risk: f64 = tied.iter().map(|&i| weights[i] * eta[i].exp()).sum();
        let tied_weight: f64 = tied.iter().map(|&i| weights[i]).sum();
        for &i in &tied {
            ll += weights[i] * eta[i];
        }
        for l in 0..tied.len() {
            ll -= tied_weight / d * (risk - l as f64 / d * tied_risk).ln();
        }
    }
    ll
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    (lo + hi) / 2.0
}

/// Cyclic coordinate ascent with golden-section line searches; converges for
/// smooth concave objectives.
pub fn coordinate_ascent(f: impl Fn(&[f64]) -> f64, dim: usize, bound: f64) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for _ in 0..5000 {
        let mut moved = 0.0f64;
        for j in 0..dim {
            let best = golden_max(
                |v| {
                    let mut y = x.clone();
                    y[j] = v;
                    f(&y)
                },
                -bound,
                bound,
                1e-11,
            );
            moved = moved.max((best - x[j]).abs());
            x[j] = best;
        }
        if moved < 1e-10 {
            break;
        }
    }
    x
}

/// Random weighted survival instance with tied integer times.
pub struct CoxInstance {
    pub covariates: Vec<Vec<f64>>,
    pub treatment: Vec<bool>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub weights: Vec<f64>,
}

impl CoxInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(10..=20);
        let p = rng.random_range(0..=2);
        let mut treatment: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        treatment[0] = true;
        treatment[1] = false;
        let covariates: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let times = (0..n).map(|_| rng.random_range(1..=8) as f64).collect();
        let events = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let weights = (0..n).map(|_| rng.random_range(0.3..2.5)).collect();
        Self {
            covariates,
            treatment,
            times,
            events,
            weights,
        }
    }

    pub fn design(&self) -> Vec<Vec<f64>> {
        self.covariates
            .iter()
            .zip(&self.treatment)
            .map(|(x, &t)| {
                std::iter::once(if t { 1.0 } else { 0.0 })
                    .chain(x.iter().copied())
                    .collect()
            })
            .collect()
    }

    /// Brute-force maximizer of the partial likelihood; `None` when the
    /// optimum sits on the search boundary (monotone likelihood).
    pub fn brute_force(&self) -> Option<Vec<f64>> {
        let design = self.design();
        let dim = design[0].len();
        let bound = 12.0;
        let beta = coordinate_ascent(
            |b| efron_loglik(&design, &self.times, &self.events, &self.weights, b),
            dim,
            bound,
        );
        beta.iter().all(|b| b.abs() < bound - 1.0).then_some(beta)
    }
}

/// One-sided exact signed-rank p-value by enumerating all 2^n sign
/// assignments of the average ranks.
pub fn wilcoxon_enumerated(deltas: &[f64]) -> f64 {
    let nz: Vec<f64> = deltas.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    let ranks: Vec<f64> = nz
        .iter()
        .map(|d| {
            let below = nz.iter().filter(|o| o.abs() < d.abs()).count() as f64;
            let equal = nz.iter().filter(|o| o.abs() == d.abs()).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if w >= observed - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Upper binomial tail in exact rational arithmetic for `p = 1/2`.
pub fn binomial_tail_half(k: u64, n: u64) -> f64 {
    let mut c = 1u128;
    let mut tail = 0u128;
    for j in 0..=n {
        if j >= k {
            tail += c;
        }
        c = c * (n - j) as u128 / (j + 1) as u128;
    }
    tail as f64 / 2f64.powi(n as i32)
}

/// Minimum total distance over all injective treated→control assignments.
pub fn optimal_assignment_cost(treated: &[Vec<f64>], controls: &[Vec<f64>]) -> f64 {
    fn go(t: usize, treated: &[Vec<f64>], controls: &[Vec<f64>], used: &mut Vec<bool>) -> f64 {
        if t == treated.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..controls.len() {
            if !used[c] {
                used[c] = true;
                let d: f64 = treated[t]
                    .iter()
                    .zip(&controls[c])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(d + go(t + 1, treated, controls, used));
                used[c] = false;
            }
        }
        best
    }
    go(0, treated, controls, &mut vec![false; controls.len()])
}

/// Oracle checks shared by the oracle suite and the acceptance run. Each
/// returns the number of instances checked or a description of the first
/// mismatch.
pub mod suites {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use survlatent::balancing::solve_entropy;
    use survlatent::stats::wilcoxon_signed_rank;
    use survlatent::survival::{cox_fit, pseudo_rmst, PseudoScope};

    use super::{naive_rmst, rng, wilcoxon_enumerated, CoxInstance};

    pub fn pseudo_uncensored() -> Result<usize, String> {
        let mut r = rng(11);
        for case in 0..40 {
            let n = r.random_range(2..=200);
            let times: Vec<f64> = (0..n)
                .map(|_| {
                    if r.random_bool(0.2) {
                        r.random_range(1..=5) as f64
                    } else {
                        r.random_range(0.0..10.0)
                    }
                })
                .collect();
            let tau = r.random_range(0.5..12.0);
            let p = pseudo_rmst(&times, &vec![true; n], &[], tau, PseudoScope::FullSample)
                .map_err(|e| e.to_string())?;
            for (i, (y, t)) in p.values.iter().zip(&times).enumerate() {
                if (y - t.min(tau)).abs() > 1e-10 {
                    return Err(format!(
                        "case {case}, patient {i}: pseudo {y} vs min(T, tau) {}",
                        t.min(tau)
                    ));
                }
            }
        }
        Ok(40)
    }

    /// Mean pseudo-value equals the RMST of the full sample. Horizons are
    /// drawn inside the observed follow-up, where the identity is exact.
    pub fn jackknife_identity() -> Result<usize, String> {
        let mut r = rng(12);
        for case in 0..60 {
            let n = r.random_range(3..=150);
            let times: Vec<f64> = (0..n)
                .map(|_| (r.random_range(0.0..10.0f64) * 4.0).round() / 4.0)
                .collect();
            let events: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
            let max_t = times.iter().copied().fold(0.0, f64::max);
            if max_t <= 0.0 {
                continue;
            }
            let tau = r.random_range(0.1..=1.0) * max_t;
            let p = pseudo_rmst(&times, &events, &[], tau, PseudoScope::FullSample)
                .map_err(|e| e.to_string())?;
            let mean = p.values.iter().sum::<f64>() / n as f64;
            let reference = naive_rmst(&times, &events, tau);
            if (mean - reference).abs() > 1e-10 {
                return Err(format!(
                    "case {case}: mean pseudo {mean} vs RMST {reference}"
                ));
            }
        }
        Ok(60)
    }

    pub fn cox_brute_force() -> Result<usize, String> {
        let mut r = rng(13);
        let mut checked = 0;
        let mut drawn = 0;
        while checked < 50 {
            drawn += 1;
            if drawn > 500 {
                return Err(format!("only {checked} instances with an interior optimum"));
            }
            let inst = CoxInstance::random(&mut r);
            let Some(beta) = inst.brute_force() else {
                continue;
            };
            let fit = cox_fit(
                &inst.covariates,
                &inst.treatment,
                &inst.times,
                &inst.events,
                &inst.weights,
            )
            .map_err(|e| format!("instance {drawn}: {e}"))?;
            if (fit.log_hr - beta[0]).abs() > 1e-4 {
                return Err(format!(
                    "instance {drawn}: solver {} vs brute force {}",
                    fit.log_hr, beta[0]
                ));
            }
            checked += 1;
        }
        Ok(checked)
    }

    pub fn entropy_residuals() -> Result<usize, String> {
        let mut r = rng(14);
        for case in 0..50 {
            let n = r.random_range(30..=100);
            let d = r.random_range(1..=4);
            let mut treatment: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
            treatment[0] = true;
            treatment[1] = false;
            let treated_dist = Normal::new(0.3, 0.8).expect("normal");
            let control_dist = Normal::new(0.0, 1.3).expect("normal");
            let rows: Vec<Vec<f64>> = treatment
                .iter()
                .map(|&t| {
                    (0..d)
                        .map(|_| {
                            if t {
                                treated_dist.sample(&mut r)
                            } else {
                                control_dist.sample(&mut r)
                            }
                        })
                        .collect()
                })
                .collect();
            let names: Vec<String> = (0..d).map(|j| format!("z{j}")).collect();
            let sol = solve_entropy(&rows, &names, &treatment)
                .map_err(|e| format!("case {case}: {e}"))?;
            let n_t = treatment.iter().filter(|&&t| t).count() as f64;
            let control_mass: f64 = sol
                .weights
                .iter()
                .zip(&treatment)
                .filter(|(_, &t)| !t)
                .map(|(w, _)| w)
                .sum();
            if (control_mass - n_t).abs() > 1e-8 || sol.weights.iter().any(|w| *w <= 0.0) {
                return Err(format!(
                    "case {case}: control mass {control_mass}, treated count {n_t}"
                ));
            }
            for j in 0..d {
                let col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
                let mean = col.iter().sum::<f64>() / n as f64;
                let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
                let treated_mean = col
                    .iter()
                    .zip(&treatment)
                    .filter(|(_, &t)| t)
                    .map(|(v, _)| v)
                    .sum::<f64>()
                    / n_t;
                let control_mean = col
                    .iter()
                    .zip(&treatment)
                    .zip(&sol.weights)
                    .filter(|((_, &t), _)| !t)
                    .map(|((v, _), w)| v * w)
                    .sum::<f64>()
                    / control_mass;
                let residual = (treated_mean - control_mean).abs() / sd;
                if residual >= 1e-6 {
                    return Err(format!("case {case}, column {j}: residual {residual:e}"));
                }
            }
        }
        Ok(50)
    }

    pub fn wilcoxon_enumeration() -> Result<usize, String> {
        let mut r = rng(15);
        let mut checked = 0;
        for case in 0..300 {
            let n = r.random_range(1..=12);
            let deltas: Vec<f64> = (0..n)
                .map(|_| r.random_range(-6..=8) as f64 / 2.0)
                .collect();
            if deltas.iter().all(|d| *d == 0.0) {
                continue;
            }
            let exact = wilcoxon_signed_rank(&deltas).map_err(|e| e.to_string())?;
            let reference = wilcoxon_enumerated(&deltas);
            if !exact.exact || (exact.p_value - reference).abs() > 1e-12 {
                return Err(format!(
                    "case {case} {deltas:?}: {} vs enumeration {reference}",
                    exact.p_value
                ));
            }
            checked += 1;
        }
        Ok(checked)
    }
}
