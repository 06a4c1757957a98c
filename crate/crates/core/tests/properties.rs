use fpme_core::extension::{dtn, extend_full, fractional_laplacian, FractionalOrder};
use fpme_core::random::{random_band_limited, random_field};
use fpme_core::*;
use proptest::prelude::*;

fn snapshot(sphere: bool, radius: f64, modes: usize) -> ManifoldSnapshot {
    let family = if sphere { Family::SphereZonal } else { Family::Circle };
    ManifoldSnapshot::new(family, radius, modes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_equivalence_constants(seed in 0u64..10_000, sphere: bool, radius in 0.3f64..4.0, decay in 0.0f64..2.0) {
        let u = random_field(snapshot(sphere, radius, 12), seed, decay);
        let pi = std::f64::consts::PI;
        let upper = ((2.0 + pi) / pi).sqrt();
        let lower = (pi / 2.0).sqrt();
        prop_assert!(u.hm_norm() <= upper * u.h12_norm_closed() * (1.0 + 1e-12));
        prop_assert!(u.h12_norm_closed() <= lower * u.hm_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn parseval(seed in 0u64..10_000, sphere: bool, radius in 0.3f64..4.0) {
        let u = random_field(snapshot(sphere, radius, 10), seed, 1.0);
        let grid = u.synthesize(4 * u.snapshot().min_grid()).unwrap();
        let back = grid.analyze().unwrap();
        for (a, b) in back.coeffs().iter().zip(u.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let sq = fpme_core::manifold::pointwise_apply(|x| x * x, &u, 2.0).unwrap();
        prop_assert!((sq.integrate() - u.l2_norm_squared()).abs() <= 1e-11 * u.l2_norm_squared().max(1.0));
    }

    #[test]
    fn pushforward_round_trip(seed in 0u64..10_000, sphere: bool, rate in -0.4f64..2.0, t in 0.0f64..1.0) {
        let family = if sphere { Family::SphereZonal } else { Family::Circle };
        let g = EvolvingGeometry::new(family, RadiusLaw::Linear { r0: 1.0, rate }, 1.0).unwrap();
        let u = random_field(g.snapshot_at(0.0, 8).unwrap(), seed, 1.0);
        let back = g.pullback(t, &g.pushforward(t, &u).unwrap()).unwrap();
        for (a, b) in back.coeffs().iter().zip(u.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn half_laplacian_is_dtn(seed in 0u64..10_000, sphere: bool, radius in 0.3f64..4.0) {
        let u = random_band_limited(snapshot(sphere, radius, 12), 8, seed, 1.0);
        let a = dtn(&u, Cylinder::Full).unwrap();
        let b = fractional_laplacian(&u, FractionalOrder::Half);
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()));
        }
        let e = extend_full(&u);
        prop_assert!((e.grad_energy() - u.hm_seminorm_squared()).abs() <= 1e-12 * u.hm_seminorm_squared().max(1.0));
    }

    #[test]
    fn odd_nonlinearities_preserve_oddness(r in 0.0f64..1.0, m in 1.0f64..3.0, k in 4.0f64..50.0) {
        let specs = [
            NonlinearitySpec::power_law(m).unwrap(),
            NonlinearitySpec::make_regularized(m, k, 1.0).unwrap(),
            NonlinearitySpec::arctan_example(1.0).unwrap(),
        ];
        for spec in &specs {
            prop_assert_eq!(spec.psi(-r).unwrap(), -spec.psi(r).unwrap());
        }
    }
}
