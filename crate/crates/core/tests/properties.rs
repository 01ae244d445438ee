use proptest::prelude::*;
use vbnn::divergence::{hellinger_true_vs_model, kl_true_vs_model, tail_mass_from_distances};
use vbnn::model::make_teacher;
use vbnn::priors::{PriorSpec, SieveSpec, log_prior_mass_outside_sieve};
use vbnn::quadrature::QuadratureRule;
use vbnn::rng::derive_seed;
use vbnn::variational::{kl_gaussian_factor, kl_scale_inverse_gamma, GaussianFactor, InverseGammaFactor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn divergences_are_in_range(
        k in 1usize..4, k0 in 1usize..4, seed in any::<u64>(),
        s in 0.2f64..3.0, s0 in 0.2f64..3.0, scale in 0.1f64..3.0,
    ) {
        let rule = QuadratureRule::default_for(1).unwrap();
        let a = make_teacher(k, 1, scale, seed).unwrap();
        let b = make_teacher(k0, 1, 1.0, seed ^ 1).unwrap();
        let f = |x: &[f64]| a.eval(x).unwrap();
        let f0 = |x: &[f64]| b.eval(x).unwrap();
        let kl = kl_true_vs_model(f, s, f0, s0, &rule).unwrap();
        let dh = hellinger_true_vs_model(f, s, f0, s0, &rule).unwrap();
        prop_assert!(kl >= -1e-12);
        prop_assert!((0.0..=2.0).contains(&dh));
        // Identical models are at distance zero.
        prop_assert!(hellinger_true_vs_model(f0, s0, f0, s0, &rule).unwrap().abs() < 1e-12);
        // Squared Hellinger never exceeds KL: d_H = 2 − 2BC ≤ KL.
        prop_assert!(dh <= kl + 1e-10);
    }

    #[test]
    fn factor_kls_are_nonnegative(m in -5.0f64..5.0, sd in 1e-3f64..10.0, v in 1e-2f64..10.0,
                                  a in 0.6f64..50.0, b in 0.01f64..50.0, alpha in 0.5f64..5.0, lambda in 0.1f64..5.0) {
        prop_assert!(kl_gaussian_factor(&GaussianFactor::new(m, sd), v) >= -1e-12);
        prop_assert!(kl_scale_inverse_gamma(&InverseGammaFactor::new(a, b), alpha, lambda) >= -1e-10);
    }

    #[test]
    fn tail_mass_is_monotone(d in prop::collection::vec(0.0f64..2.0, 1..200)) {
        let eps = [0.05, 0.1, 0.2, 0.5, 1.0];
        let t = tail_mass_from_distances(&d, &eps);
        prop_assert!(t.windows(2).all(|w| w[1].estimate <= w[0].estimate));
    }

    #[test]
    fn derived_seeds_depend_on_every_tag(m in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(m, &[a]), derive_seed(m, &[b]));
        prop_assert_ne!(derive_seed(m, &[a, b]), derive_seed(m, &[b, a]));
    }
}

#[test]
fn outside_sieve_bound_decreases_in_n() {
    let sieve = SieveSpec { a: 0.25, b: 0.5 };
    let prior = PriorSpec::FixedGaussian { zeta: 1.0 };
    let v: Vec<f64> = [100, 1000, 10_000, 100_000]
        .iter()
        .map(|&n| log_prior_mass_outside_sieve(&prior, &sieve, n, 2).unwrap())
        .collect();
    assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
}
