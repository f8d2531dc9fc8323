mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{cohort_from, rng};
use survlatent::balancing::{
    fit_iptw, prognostic_match, scalar_reweight, score_buckets, solve_entropy, WEIGHT_BOUNDS,
};
use survlatent::data::Cohort;
use survlatent::latent::{
    ablation_latent, compute_latent, permute_latent, AblationVariant, Direction, LatentConfig,
    PermutationMode,
};
use survlatent::numeric::correlation;
use survlatent::stats::{pairwise_dispersion, sign_test};
use survlatent::survival::{cox_fit, pseudo_rmst, PseudoScope};
use survlatent::synthetic::{generate, SynthConfig};

fn random_cohort(seed: u64, n: usize, d: usize, censor_p: f64) -> Cohort {
    let mut r = rng(seed);
    let mut treatment: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
    treatment[0] = true;
    treatment[1] = false;
    let times: Vec<f64> = (0..n).map(|_| r.random_range(1..=30) as f64).collect();
    let events: Vec<bool> = (0..n).map(|_| !r.random_bool(censor_p)).collect();
    let covs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    cohort_from(&times, &events, &treatment, &covs)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn arm_values(values: &[f64], treatment: &[bool], arm: bool) -> Vec<f64> {
    sorted(
        values
            .iter()
            .zip(treatment)
            .filter(|(_, &t)| t == arm)
            .map(|(v, _)| *v)
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn neighbor_sets_respect_arm_and_direction(
        seed in any::<u64>(), n in 6usize..40, d in 1usize..4, censor in 0.0f64..0.8, k in 1usize..8,
    ) {
        let c = random_cohort(seed, n, d, censor);
        let cfg = LatentConfig { k, tau: 20.0, ..LatentConfig::default() };
        let l = compute_latent(&c, None, &cfg).unwrap();
        let (t, e, a) = (c.times(), c.events(), c.treatment());
        for s in &l.neighbor_sets {
            let i = s.anchor;
            prop_assert!(s.neighbors.len() <= k);
            prop_assert_eq!(s.neighbors.len(), s.candidate_count.min(k));
            for &j in &s.neighbors {
                prop_assert_eq!(a[j], a[i]);
                match s.direction {
                    Direction::LongerSurvivors => prop_assert!(e[i] && t[j] > t[i]),
                    Direction::EarlierEvents => prop_assert!(!e[i] && e[j] && t[j] < t[i]),
                }
            }
            prop_assert_eq!(l.fallback[i], s.neighbors.is_empty());
        }
    }

    #[test]
    fn normalized_latent_is_bounded_and_monotone(
        seed in any::<u64>(), n in 6usize..40, d in 1usize..4, censor in 0.0f64..0.8, q in 0.6f64..1.0,
    ) {
        let c = random_cohort(seed, n, d, censor);
        let cfg = LatentConfig { k: 3, tau: 20.0, winsor_quantile: q, ..LatentConfig::default() };
        let l = compute_latent(&c, None, &cfg).unwrap();
        let a = c.treatment();
        for i in 0..n {
            prop_assert!(l.normalized_u[i].abs() <= 1.0);
            prop_assert!(l.normalized_u[i] == 0.0 || l.normalized_u[i].signum() == l.raw_u[i].signum());
            for j in 0..n {
                let same_group = a[i] == a[j] && l.raw_u[i].signum() == l.raw_u[j].signum();
                if same_group && l.raw_u[i].abs() <= l.raw_u[j].abs() {
                    prop_assert!(l.normalized_u[i].abs() <= l.normalized_u[j].abs());
                }
            }
        }
    }

    #[test]
    fn uncensored_monotone_outcomes_give_signed_latent(seed in any::<u64>(), n in 6usize..40, d in 1usize..4) {
        let c = random_cohort(seed, n, d, 0.0);
        // Horizon past every time: pseudo-values equal the times themselves.
        let cfg = LatentConfig { k: 4, tau: 100.0, ..LatentConfig::default() };
        let l = compute_latent(&c, None, &cfg).unwrap();
        for i in 0..n {
            if !l.fallback[i] {
                prop_assert!(l.raw_u[i] < 0.0);
            }
        }
    }

    #[test]
    fn permutations_preserve_multisets(seed in any::<u64>(), n in 6usize..40, perm_seed in any::<u64>()) {
        let c = random_cohort(seed, n, 2, 0.4);
        let a = c.treatment();
        let l = compute_latent(&c, None, &LatentConfig { k: 3, tau: 20.0, ..LatentConfig::default() }).unwrap();
        let within = permute_latent(&l, &a, PermutationMode::UWithinArm, perm_seed).unwrap();
        for arm in [false, true] {
            prop_assert_eq!(arm_values(&within.normalized_u, &a, arm), arm_values(&l.normalized_u, &a, arm));
        }
        let global = permute_latent(&l, &a, PermutationMode::UGlobal, perm_seed).unwrap();
        prop_assert_eq!(sorted(global.normalized_u.clone()), sorted(l.normalized_u.clone()));
        let y = permute_latent(&l, &a, PermutationMode::YWithinArm, perm_seed).unwrap();
        for arm in [false, true] {
            prop_assert_eq!(arm_values(&y.pseudo.values, &a, arm), arm_values(&l.pseudo.values, &a, arm));
        }
        prop_assert_eq!(&y.neighbor_sets, &l.neighbor_sets);
        let again = permute_latent(&l, &a, PermutationMode::UGlobal, perm_seed).unwrap();
        prop_assert_eq!(global, again);
    }

    #[test]
    fn random_neighbors_keep_direction(seed in any::<u64>(), n in 6usize..40, ab_seed in any::<u64>()) {
        let c = random_cohort(seed, n, 2, 0.4);
        let cfg = LatentConfig { k: 3, tau: 20.0, ..LatentConfig::default() };
        let l = ablation_latent(&c, None, AblationVariant::RandomNeighbors, &cfg, ab_seed).unwrap();
        let (t, e, a) = (c.times(), c.events(), c.treatment());
        for s in &l.neighbor_sets {
            for &j in &s.neighbors {
                prop_assert_eq!(a[j], a[s.anchor]);
                let ok = if e[s.anchor] { t[j] > t[s.anchor] } else { e[j] && t[j] < t[s.anchor] };
                prop_assert!(ok);
            }
        }
        let again = ablation_latent(&c, None, AblationVariant::RandomNeighbors, &cfg, ab_seed).unwrap();
        prop_assert_eq!(l, again);
    }

    #[test]
    fn pseudo_values_equal_truncated_times_without_censoring(
        times in prop::collection::vec(0.0f64..50.0, 2..120), tau in 0.5f64..60.0,
    ) {
        let n = times.len();
        let p = pseudo_rmst(&times, &vec![true; n], &[], tau, PseudoScope::FullSample).unwrap();
        for (y, t) in p.values.iter().zip(&times) {
            prop_assert!((y - t.min(tau)).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_test_tails_are_complementary(n in 1u64..=50, k in 0u64..=50) {
        let k = k.min(n);
        let upper = sign_test(k, n).unwrap();
        let lower = if k == 0 { 0.0 } else { sign_test(n - k + 1, n).unwrap() };
        prop_assert_eq!(upper + lower, 1.0);
    }

    #[test]
    fn matched_cohorts_pair_every_retained_patient(seed in any::<u64>(), n in 6usize..40, bins in 1usize..5) {
        let c = random_cohort(seed, n, 2, 0.3);
        let scores: Vec<f64> = c.covariate_rows().iter().map(|r| r[0] - 0.5 * r[1]).collect();
        let Ok(m) = prognostic_match(&c, &scores, bins) else { return Ok(()); };
        let a = m.cohort.treatment();
        for (i, p) in m.matched_partner.iter().enumerate() {
            let p = p.expect("every retained patient has a partner");
            prop_assert_ne!(a[i], a[p]);
            prop_assert_eq!(m.matched_partner[p], Some(i));
            let bucket = score_buckets(&scores, bins);
            prop_assert_eq!(bucket[m.source_index[i]], bucket[m.source_index[p]]);
        }
        prop_assert!(m.weights.iter().all(|&w| w == 1.0));
        let latent: Vec<f64> = (0..m.cohort.len()).map(|i| ((i * 7919) % 13) as f64 / 6.5 - 1.0).collect();
        if let Ok(r) = scalar_reweight(&m, &latent) {
            let w = r.diagnostics.scalar_weight.unwrap();
            prop_assert!(w.weight >= WEIGHT_BOUNDS.0 && w.weight <= WEIGHT_BOUNDS.1);
            prop_assert!(r.validate().is_ok());
        }
    }

    #[test]
    fn score_buckets_are_monotone(scores in prop::collection::vec(-5i32..5, 1..60), bins in 1usize..8) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let b = score_buckets(&s, bins);
        for i in 0..s.len() {
            prop_assert!(b[i] < bins);
            for j in 0..s.len() {
                if s[i] <= s[j] {
                    prop_assert!(b[i] <= b[j]);
                }
            }
        }
    }

    #[test]
    fn balancing_weights_are_nonnegative(seed in any::<u64>(), n in 20usize..80, clip in 0.01f64..0.2) {
        let mut r = rng(seed);
        let mut treatment: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        treatment[0] = true;
        treatment[1] = false;
        let rows: Vec<Vec<f64>> = treatment
            .iter()
            .map(|&t| vec![r.random_range(-1.0..1.0) + if t { 0.2 } else { 0.0 }, r.random_range(-1.0..1.0)])
            .collect();
        let iptw = fit_iptw(&rows, &treatment, clip).unwrap();
        for (i, &w) in iptw.weights.iter().enumerate() {
            prop_assert!(w >= 0.0);
            if treatment[i] {
                prop_assert_eq!(w, 1.0);
            }
            prop_assert!(iptw.propensity[i] >= clip && iptw.propensity[i] <= 1.0 - clip);
        }
        if let Ok(sol) = solve_entropy(&rows, &["a".into(), "b".into()], &treatment) {
            prop_assert!(sol.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn cox_is_invariant_to_weight_scale(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let inst = common::CoxInstance::random(&mut r);
        let scaled: Vec<f64> = inst.weights.iter().map(|w| w * scale).collect();
        if let (Ok(a), Ok(b)) = (
            cox_fit(&inst.covariates, &inst.treatment, &inst.times, &inst.events, &inst.weights),
            cox_fit(&inst.covariates, &inst.treatment, &inst.times, &inst.events, &scaled),
        ) {
            prop_assert!((a.log_hr - b.log_hr).abs() < 1e-6);
        }
    }

    #[test]
    fn dispersion_is_shift_invariant(v in prop::collection::vec(-3.0f64..3.0, 2..8), shift in -5.0f64..5.0) {
        let moved: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let a = pairwise_dispersion(&v).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - pairwise_dispersion(&moved).unwrap()).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_is_deterministic_and_hides_latent(seed in any::<u64>()) {
        let cfg = SynthConfig { n: 300, seed, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        prop_assert_eq!(&a.cohort, &b.cohort);
        prop_assert_eq!(a.hidden_v(), b.hidden_v());
        prop_assert_eq!(a.cohort.n_features(), cfg.d);
        for j in 0..cfg.d {
            let col: Vec<f64> = a.cohort.covariate_rows().iter().map(|r| r[j]).collect();
            prop_assert_ne!(&col[..], a.hidden_v());
        }
    }

    #[test]
    fn randomized_assignment_is_independent_of_covariates(seed in any::<u64>()) {
        let n = 4000;
        let s = generate(&SynthConfig { n, seed, rct_mode: true, ..SynthConfig::default() }).unwrap();
        let t: Vec<f64> = s.cohort.treatment().iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let bound = 4.0 / (n as f64).sqrt();
        prop_assert!(correlation(&t, s.hidden_v()).abs() < bound);
        for j in 0..s.cohort.n_features() {
            let col: Vec<f64> = s.cohort.covariate_rows().iter().map(|r| r[j]).collect();
            prop_assert!(correlation(&t, &col).abs() < bound);
        }
    }
}
