mod common;

use common::normal_vec;
use gsr_core::data::ClassDistribution;
use gsr_core::metrics::{
    diagonality, gaussian_frechet, grouped_covariance, mode_coverage, per_class_frechet, Cov2,
};
use gsr_core::spectral::divisor_pairs;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn psd() -> impl Strategy<Value = Cov2> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b, c, d)| {
        // AAᵀ is PSD by construction
        [[a * a + b * b, a * c + b * d], [a * c + b * d, c * c + d * d]]
    })
}

fn mean() -> impl Strategy<Value = [f64; 2]> {
    (-3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y)| [x, y])
}

proptest! {
    #[test]
    fn frechet_is_symmetric(m1 in mean(), s1 in psd(), m2 in mean(), s2 in psd()) {
        let a = gaussian_frechet(m1, &s1, m2, &s2).unwrap();
        let b = gaussian_frechet(m2, &s2, m1, &s1).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn frechet_vanishes_on_matching_moments(m in mean(), s in psd()) {
        let d = gaussian_frechet(m, &s, m, &s).unwrap();
        prop_assert!(d <= 1e-9 * (1.0 + s[0][0] + s[1][1]));
    }

    #[test]
    fn frechet_positive_on_mismatched_means(m in mean(), s in psd(), dx in 0.1f64..2.0) {
        let d = gaussian_frechet(m, &s, [m[0] + dx, m[1]], &s).unwrap();
        prop_assert!((d - dx * dx).abs() <= 1e-8 * (1.0 + s[0][0] + s[1][1]));
    }

    #[test]
    fn diagonality_invariances(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_g, n_c) = (4, 6);
        let gamma = normal_vec(&mut rng, n_g * n_c, 1.0);
        let base = grouped_covariance(&gamma, n_g, 0, 0).unwrap().diagonality;
        prop_assert!((0.0..=1.0).contains(&base));
        let scaled: Vec<f64> = gamma.iter().map(|x| x * scale).collect();
        let ds = grouped_covariance(&scaled, n_g, 0, 0).unwrap().diagonality;
        prop_assert!((ds - base).abs() < 1e-12);
        // reverse the row order
        let permuted: Vec<f64> = (0..n_g).rev().flat_map(|i| gamma[i * n_c..(i + 1) * n_c].to_vec()).collect();
        let dp = grouped_covariance(&permuted, n_g, 0, 0).unwrap().diagonality;
        prop_assert!((dp - base).abs() < 1e-12);
    }
}

#[test]
fn grouped_covariance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for d in [16, 64] {
        for (n_g, n_c) in divisor_pairs(d) {
            if n_c < 2 {
                continue;
            }
            let gamma = normal_vec(&mut rng, d, 1.0);
            let rep = grouped_covariance(&gamma, n_g, 0, 0).unwrap();
            for i in 0..n_g {
                for j in 0..n_g {
                    let mi = gamma[i * n_c..(i + 1) * n_c].iter().sum::<f64>() / n_c as f64;
                    let mj = gamma[j * n_c..(j + 1) * n_c].iter().sum::<f64>() / n_c as f64;
                    let mut acc = 0.0;
                    for k in 0..n_c {
                        acc += (gamma[i * n_c + k] - mi) * (gamma[j * n_c + k] - mj);
                    }
                    let c = acc / n_c as f64;
                    assert!((rep.covariance[i * n_g + j] - c).abs() < 1e-14, "{n_g}x{n_c}");
                }
            }
            // symmetric PSD: diagonal non-negative and every 2×2 minor non-negative
            for i in 0..n_g {
                assert!(rep.covariance[i * n_g + i] >= 0.0);
                for j in 0..n_g {
                    assert_eq!(rep.covariance[i * n_g + j], rep.covariance[j * n_g + i]);
                    let minor = rep.covariance[i * n_g + i] * rep.covariance[j * n_g + j]
                        - rep.covariance[i * n_g + j].powi(2);
                    assert!(minor >= -1e-10);
                }
            }
            assert_eq!(rep.diagonality, diagonality(&rep.covariance, n_g));
        }
    }
}

fn draws(r: &ClassDistribution, n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.sample(&mut rng).unwrap()).collect()
}

#[test]
fn frechet_shrinks_with_sample_count() {
    let r = ClassDistribution::isotropic(0, [1.0, -1.0], 0.3);
    let avg = |n: usize| -> f64 {
        (0..20).map(|s| per_class_frechet(&draws(&r, n, 100 + s), &r).unwrap()).sum::<f64>() / 20.0
    };
    let (a, b, c) = (avg(100), avg(1000), avg(10_000));
    assert!(a > b && b > c, "{a} {b} {c}");
    let big = per_class_frechet(&draws(&r, 100_000, 7), &r).unwrap();
    assert!(big < 0.01, "{big}");
}

#[test]
fn coverage_of_reference_draws_matches_chi_squared() {
    let r = ClassDistribution::isotropic(0, [0.0, 2.0], 0.15);
    let pts = draws(&r, 100_000, 8);
    let c = mode_coverage(&pts, &r, 3.0).unwrap();
    // P(χ²₂ ≤ 9) = 1 − e^{−4.5}
    let expected = 1.0 - (-4.5f64).exp();
    assert!((c.coverage - expected).abs() < 0.002, "{}", c.coverage);
    assert!((c.sample_std[0] - 0.15).abs() < 0.003);
}

#[test]
fn point_mass_frechet_exceeds_reference_trace() {
    let r = ClassDistribution::isotropic(0, [0.0, 0.0], 0.2);
    for p in [[0.0, 0.0], [0.5, 0.1]] {
        let d = per_class_frechet(&[p; 5], &r).unwrap();
        assert!(d >= 2.0 * 0.04 - 1e-15);
    }
}
