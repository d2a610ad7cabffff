mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use psalm::family::{free_scale_params, total_free_params, ModelCode, ScaleMatrix};
use psalm::metrics::{adjusted_rand_index, ari, rand_index, Partition};
use psalm::special::{bessel_ratio, gig_log_density, gig_moments, log_bessel_k, GigParams};

use common::*;

#[test]
fn log_bessel_k_matches_quadrature_on_a_grid() {
    for nu in [-4.5, -1.0, 0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 10.0, 25.0] {
        for z in [1e-3, 0.05, 0.5, 1.0, 2.5, 10.0, 60.0, 300.0] {
            let want = quadrature_log_k(nu, z);
            let got = log_bessel_k(nu, z).unwrap();
            assert!(
                (got - want).abs() <= 1e-8 * want.abs().max(1.0),
                "nu={nu} z={z}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn gig_moments_match_quadrature() {
    for (a, b, nu) in [(2.0, 2.0, -0.5), (1.0, 4.0, 0.0), (3.5, 0.2, -1.5), (2.7, 9.0, -2.0), (5.0, 0.5, 1.0)] {
        let params = GigParams::new(a, b, nu).unwrap();
        let (m, im) = gig_moments(&params);
        assert_relative_eq!(m, gig_moment_quadrature(a, b, nu, 1.0), max_relative = 1e-6);
        assert_relative_eq!(im, gig_moment_quadrature(a, b, nu, -1.0), max_relative = 1e-6);
        let mass = integrate_positive(|w| gig_log_density(w, &params).unwrap(), m);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass} for ({a}, {b}, {nu})");
    }
}

fn code_strategy() -> impl Strategy<Value = ModelCode> {
    (0usize..12).prop_map(|i| ModelCode::ALL[i])
}

#[test]
fn parameter_counts_follow_the_table() {
    for code in ModelCode::ALL {
        for p in 2..=8 {
            for q in 1..=3 {
                for g in 1..=5 {
                    if q > p {
                        assert!(free_scale_params(code, p, q, g).is_err());
                        continue;
                    }
                    let want = table_scale_params(&code.to_string(), p, q, g);
                    assert_eq!(free_scale_params(code, p, q, g).unwrap(), want, "{code} p={p} q={q} G={g}");
                    assert_eq!(
                        total_free_params(code, p, q, g).unwrap(),
                        want + (g - 1) + 2 * g * p
                    );
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bessel_recurrence(nu in -20.0f64..20.0, z in 1e-2f64..200.0) {
        // K_{ν+1} − K_{ν−1} = (2ν/z) K_ν, divided through by K_ν.
        let up = bessel_ratio(nu, z).unwrap();
        let down = 1.0 / bessel_ratio(nu - 1.0, z).unwrap();
        prop_assert!((up - down - 2.0 * nu / z).abs() <= 1e-9 * up.abs().max(1.0));
        let k = log_bessel_k(nu, z).unwrap();
        prop_assert!((log_bessel_k(-nu, z).unwrap() - k).abs() <= 1e-12 * k.abs().max(1.0));
    }

    #[test]
    fn woodbury_matches_dense(
        p in 1usize..=8,
        q in 1usize..=3,
        seed in any::<u64>(),
    ) {
        prop_assume!(q <= p);
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let loadings = DMatrix::from_fn(p, q, |_, _| 4.0 * next() - 2.0);
        let psi = DVector::from_fn(p, |_, _| 0.05 + 3.0 * next());
        let scale = ScaleMatrix::from_psi(loadings.clone(), &psi).unwrap();
        let (sigma, inverse, log_det) = dense_scale(&loadings, &psi);
        prop_assert!((scale.dense() - &sigma).amax() <= 1e-10 * sigma.amax());
        let got = scale.woodbury_inverse().unwrap();
        prop_assert!((&got - &inverse).amax() <= 1e-8 * inverse.amax().max(1.0));
        prop_assert!((scale.woodbury_logdet().unwrap() - log_det).abs() <= 1e-8 * log_det.abs().max(1.0));
    }

    #[test]
    fn parameter_counts_are_monotone(code in code_strategy(), p in 2usize..=8, q in 1usize..=3, g in 1usize..=5) {
        prop_assume!(q <= p);
        let base = free_scale_params(code, p, q, g).unwrap();
        prop_assert!(free_scale_params(code, p, q, g + 1).unwrap() >= base);
        if q < p {
            prop_assert!(free_scale_params(code, p, q + 1, g).unwrap() > base);
        }
    }

    #[test]
    fn ari_matches_pair_counting(
        labels in (2usize..=60).prop_flat_map(|n| {
            (proptest::collection::vec(0usize..5, n), proptest::collection::vec(0usize..4, n))
        })
    ) {
        let (a, b) = labels;
        let got = ari(&a, &b).unwrap();
        prop_assert!((got - brute_force_ari(&a, &b)).abs() < 1e-12);
        let pa = Partition::new(a.clone()).unwrap();
        let pb = Partition::new(b.clone()).unwrap();
        prop_assert!((rand_index(&pa, &pb).unwrap() - brute_force_rand(&a, &b)).abs() < 1e-12);
        // Relabelling either side leaves both indices unchanged.
        let relabelled: Vec<usize> = a.iter().map(|&x| 10 - 2 * x).collect();
        let pr = Partition::new(relabelled).unwrap();
        prop_assert!((adjusted_rand_index(&pr, &pb).unwrap() - got).abs() < 1e-12);
        prop_assert!((adjusted_rand_index(&pb, &pa).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn self_agreement_is_one(a in proptest::collection::vec(0usize..4, 2..60)) {
        prop_assume!(a.iter().any(|&x| x != a[0]));
        let pa = Partition::new(a).unwrap();
        prop_assert_eq!(rand_index(&pa, &pa).unwrap(), 1.0);
        prop_assert_eq!(adjusted_rand_index(&pa, &pa).unwrap(), 1.0);
    }
}

#[test]
fn ari_has_zero_mean_under_independent_labels() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let draws = 2000;
    let mut total = 0.0;
    for _ in 0..draws {
        let a: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        total += ari(&a, &b).unwrap();
    }
    let mean = total / draws as f64;
    assert!(mean.abs() < 0.02, "mean ARI {mean}");
}
