//! Statistics checked against independent oracles: an exhaustive
//! permutation test and frozen values from a reference statistics library.

mod common;

use dispatch_lab::stats::{summarize, t_critical_975, welch_t_test};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn welch_matches_permutation_oracle() {
    let worst = common::welch_vs_permutation_worst();
    eprintln!("max |p_welch - p_perm| over 20 cases: {worst:.4}");
    assert!(worst <= 0.05);
}

#[test]
fn permutation_oracle_sanity() {
    assert_eq!(common::permutation_p(&[1.0, 2.0], &[3.0, 4.0]), 2.0 / 6.0);
    assert_eq!(common::permutation_p(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
}

struct Frozen {
    a: &'static [f64],
    b: &'static [f64],
    t: f64,
    df: f64,
    p: f64,
}

const FROZEN: [Frozen; 5] = [
    Frozen {
        a: &[1.0, 2.0, 3.0, 4.0, 5.0],
        b: &[2.0, 3.0, 4.0, 5.0, 6.0],
        t: -1.0,
        df: 8.0,
        p: 0.34659350708733416,
    },
    Frozen {
        a: &[10.1, 9.8, 10.4, 10.0, 9.9, 10.2],
        b: &[11.0, 10.7, 11.4, 10.9],
        t: -5.439200829200687,
        df: 5.142804833394352,
        p: 0.0026128551439550847,
    },
    Frozen {
        a: &[0.72, 0.70, 0.75, 0.71, 0.74, 0.73, 0.69, 0.72],
        b: &[0.62, 0.60, 0.65, 0.61, 0.66, 0.63, 0.59, 0.64],
        t: 8.49705831449919,
        df: 13.461538461538463,
        p: 8.95142795799574e-07,
    },
    Frozen {
        a: &[35.8, 36.2, 35.1, 36.9, 35.5, 35.9, 36.4],
        b: &[496.8, 480.2, 510.5, 470.9, 505.1, 499.3, 488.0],
        t: -85.9946236559139,
        df: 6.021427882603312,
        p: 1.5573297679456214e-10,
    },
    Frozen {
        a: &[1.0, 1.5, 0.9, 1.2, 3.0, 1.1],
        b: &[1.05, 1.10, 1.00, 1.15, 1.08, 1.12, 1.02, 1.09, 1.11],
        t: 1.150490739332663,
        df: 5.025321548659809,
        p: 0.30172752103526956,
    },
];

#[test]
fn welch_matches_reference_library_values() {
    for (i, c) in FROZEN.iter().enumerate() {
        let r = welch_t_test(c.a, c.b).unwrap();
        assert!(
            (r.t_stat - c.t).abs() <= 1e-3 * c.t.abs().max(1.0),
            "case {i} t {}",
            r.t_stat
        );
        assert!((r.df - c.df).abs() <= 1e-3 * c.df, "case {i} df {}", r.df);
        assert!((r.p_two_tailed - c.p).abs() <= 1e-3, "case {i} p {}", r.p_two_tailed);
        assert!(
            (r.p_two_tailed - c.p).abs() <= 1e-6 + 1e-6 * c.p,
            "case {i} p {}",
            r.p_two_tailed
        );
    }
}

#[test]
fn welch_is_antisymmetric() {
    for c in &FROZEN {
        let ab = welch_t_test(c.a, c.b).unwrap();
        let ba = welch_t_test(c.b, c.a).unwrap();
        assert_eq!(ab.t_stat, -ba.t_stat);
        assert_eq!(ab.p_two_tailed, ba.p_two_tailed);
    }
}

#[test]
fn hand_computed_confidence_interval() {
    let s = summarize(&[10.0, 12.0, 14.0, 16.0, 18.0]).unwrap();
    assert_eq!(s.mean, 14.0);
    assert!((s.std - 10f64.sqrt()).abs() < 1e-12);
    assert!((t_critical_975(4.0) - 2.7764451051977987).abs() < 1e-9);
    assert!((s.ci95_low - 10.0735).abs() < 5e-5);
    assert!((s.ci95_high - 17.9265).abs() < 5e-5);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn ci_half_width_shrinks_with_sqrt_n(seed in any::<u64>(), n in 200usize..1000) {
        let small = summarize(&common::normal_samples(seed, n, 10.0, 2.0)).unwrap();
        let large = summarize(&common::normal_samples(seed ^ 0x9e37_79b9, 4 * n, 10.0, 2.0)).unwrap();
        let ratio = large.ci95_half_width() / small.ci95_half_width();
        prop_assert!((ratio - 0.5).abs() <= 0.125, "ratio {}", ratio);
    }

    #[test]
    fn summarize_ignores_sample_order(mut xs in prop::collection::vec(-1e3f64..1e3, 2..40), seed in any::<u64>()) {
        let before = summarize(&xs).unwrap();
        use rand::seq::SliceRandom;
        xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let after = summarize(&xs).unwrap();
        let tol = |x: f64| 1e-9 * x.abs().max(1.0);
        prop_assert!((before.mean - after.mean).abs() <= tol(before.mean));
        prop_assert!((before.std - after.std).abs() <= tol(before.std));
        prop_assert!((before.ci95_low - after.ci95_low).abs() <= tol(before.ci95_low));
    }

    #[test]
    fn welch_p_in_unit_interval(a in prop::collection::vec(-1e3f64..1e3, 2..20), b in prop::collection::vec(-1e3f64..1e3, 2..20)) {
        let r = welch_t_test(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_two_tailed));
        prop_assert!(r.df > 0.0);
    }
}
