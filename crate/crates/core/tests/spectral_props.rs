mod common;

use common::{central_diff, normal_vec};
use gsr_core::spectral::{
    self, divisor_pairs, group, gsrip_penalty, oracle, sigma_max_power, ungroup, GroupedMatrix,
    PowerIterState,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(-3.0f64..3.0, r * c))
    })
}

proptest! {
    #[test]
    fn group_ungroup_is_a_bijection(d_pow in 0u32..9, seed in any::<u64>()) {
        let d = 1usize << d_pow;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = normal_vec(&mut rng, d, 1.0);
        for (n_g, n_c) in divisor_pairs(d) {
            let m = group(&v, n_g).unwrap();
            prop_assert_eq!(m.n_c(), n_c);
            prop_assert_eq!(ungroup(&m), v.clone());
        }
    }

    #[test]
    fn sigma_is_scale_equivariant((r, c, data) in matrix_strategy(), k in -5.0f64..5.0) {
        let m = GroupedMatrix::from_rows(r, c, data);
        prop_assume!(!m.is_zero());
        let s = spectral::sigma_max_converged(&m).sigma;
        let s_oracle = oracle::sigma_max_svd_oracle(&m);
        let sk = oracle::sigma_max_svd_oracle(&m.scaled(k));
        prop_assert!((sk - k.abs() * s_oracle).abs() <= 1e-10 * (1.0 + sk));
        // converged power iteration agrees on the scaled matrix too
        let skp = spectral::sigma_max_converged(&m.scaled(k)).sigma;
        prop_assert!((skp - k.abs() * s).abs() <= 1e-9 * (1.0 + skp));
    }

    #[test]
    fn power_sigma_never_decreases((r, c, data) in matrix_strategy(), seed in any::<u64>()) {
        let m = GroupedMatrix::from_rows(r, c, data);
        let mut st = PowerIterState::seeded(c, seed);
        let mut prev = 0.0;
        for _ in 0..30 {
            let s = sigma_max_power(&m, 1, &mut st).unwrap().sigma;
            prop_assert!(s >= prev - 1e-12, "{} after {}", s, prev);
            prev = s;
        }
        prop_assert!(prev <= oracle::sigma_max_svd_oracle(&m) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn gsrip_is_non_negative((r, c, data) in matrix_strategy()) {
        let m = GroupedMatrix::from_rows(r, c, data);
        let p = gsrip_penalty(&m);
        prop_assert!(p >= 0.0);
        let o = oracle::gsrip_penalty_oracle(&m);
        prop_assert!((p - o).abs() <= 1e-8 * (1.0 + o));
    }
}

#[test]
fn gsrip_vanishes_exactly_on_orthonormal_columns() {
    // columns of a rotation, and a 3×2 slice of one
    let (c, s) = (0.6f64, 0.8f64);
    let rot = GroupedMatrix::from_rows(2, 2, vec![c, -s, s, c]);
    assert!(gsrip_penalty(&rot) < 1e-24);
    let tall = GroupedMatrix::from_rows(3, 2, vec![c, 0.0, s, 0.0, 0.0, 1.0]);
    assert!(gsrip_penalty(&tall) < 1e-24);
    let scaled = rot.scaled(1.1);
    assert!((gsrip_penalty(&scaled) - (1.21f64 - 1.0).powi(2)).abs() < 1e-12);
    // 2 rows cannot hold 3 orthonormal columns
    let wide = GroupedMatrix::from_rows(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!((gsrip_penalty(&wide) - 1.0).abs() < 1e-12);
}

#[test]
fn sigma_gradient_matches_finite_differences_with_a_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 40 {
        let (r, c) = [(2, 32), (4, 16), (8, 8), (16, 4)][checked % 4];
        let data = normal_vec(&mut rng, r * c, 1.0);
        let m = GroupedMatrix::from_rows(r, c, data.clone());
        if oracle::spectral_gap(&m) < 1.1 {
            continue;
        }
        let est = spectral::sigma_max_converged(&m);
        let grad = spectral::sigma_max_gradient(&m, &est.u, &est.v);
        let num = central_diff(
            &mut |x| oracle::sigma_max_svd_oracle(&GroupedMatrix::from_rows(r, c, x.to_vec())),
            &data,
            1e-5,
        );
        let err = common::rel_err(grad.data(), &num);
        assert!(err < 1e-4, "shape {r}x{c}: {err}");
        checked += 1;
    }
}

#[test]
fn hundred_iterations_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in [64, 256] {
        for (n_g, n_c) in divisor_pairs(d) {
            let m = GroupedMatrix::from_rows(n_g, n_c, normal_vec(&mut rng, d, 1.0));
            if oracle::spectral_gap(&m) < 1.05 {
                continue;
            }
            let mut st = PowerIterState::seeded(n_c, 5);
            let s = sigma_max_power(&m, 100, &mut st).unwrap().sigma;
            let o = oracle::sigma_max_svd_oracle(&m);
            assert!((s - o).abs() / o < 1e-8, "{n_g}x{n_c}: {s} vs {o}");
        }
    }
}
