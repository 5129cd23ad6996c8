use dabsde_core::comparison::check_ordering;
use dabsde_core::fbm::{covariance, Hurst, TimeGrid};
use dabsde_core::frcalc::{beta_norm, dh_weight, inner_product, phi, BetaNormConfig};
use dabsde_core::problem::{lipschitz_probe, theorem_beta, validate_delays, DelayStructure, GeneratorSpec, LinearCoefficients};
use dabsde_core::solver::SolutionPair;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use proptest::prelude::*;

fn hurst() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

fn sampled(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_with_power_diagonal(s in 0.0f64..5.0, t in 0.0f64..5.0, h in hurst()) {
        let h = Hurst::new(h).unwrap();
        let a = covariance(s, t, h).unwrap();
        prop_assert!((a - covariance(t, s, h).unwrap()).abs() < 1e-12);
        prop_assert!((covariance(t, t, h).unwrap() - t.powf(h.two_h())).abs() < 1e-12);
        // Cauchy-Schwarz
        prop_assert!(a * a <= s.powf(h.two_h()) * t.powf(h.two_h()) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn phi_is_even(x in 0.01f64..10.0, h in 0.51f64..0.99) {
        let h = Hurst::new(h).unwrap();
        prop_assert_eq!(phi(x, h).unwrap(), phi(-x, h).unwrap());
        prop_assert!(phi(x, h).unwrap() > 0.0);
    }

    #[test]
    fn inner_product_is_symmetric_and_bilinear(
        xi in sampled(17), eta in sampled(17), zeta in sampled(17),
        a in -2.0f64..2.0, h in 0.5f64..0.95, k in 1usize..=16,
    ) {
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let h = Hurst::new(h).unwrap();
        let t = grid.point(k);
        let ip = |x: &[f64], y: &[f64]| inner_product(x, y, &grid, h, t).unwrap();
        let xy = ip(&xi, &eta);
        prop_assert!((xy - ip(&eta, &xi)).abs() <= 1e-12 * (1.0 + xy.abs()));
        let combo: Vec<f64> = xi.iter().zip(&zeta).map(|(x, z)| a * x + z).collect();
        let lhs = ip(&combo, &eta);
        let rhs = a * xy + ip(&zeta, &eta);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn inner_product_gram_matrices_are_psd(fs in prop::collection::vec(sampled(33), 5), h in 0.5f64..0.95) {
        let grid = TimeGrid::uniform(2.0, 32).unwrap();
        let h = Hurst::new(h).unwrap();
        let gram = DMatrix::from_fn(5, 5, |i, j| inner_product(&fs[i], &fs[j], &grid, h, 2.0).unwrap());
        let scale = gram.diagonal().max().max(1.0);
        let min = SymmetricEigen::new(gram).eigenvalues.min();
        prop_assert!(min >= -1e-9 * scale, "smallest eigenvalue {min}");
    }

    #[test]
    fn beta_norm_is_monotone_in_beta(vals in sampled(3 * 21), b1 in 0.0f64..5.0, db in 0.0f64..5.0, h in 0.5f64..0.95) {
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let h = Hurst::new(h).unwrap();
        let v = Array2::from_shape_vec((3, 21), vals).unwrap();
        let norm = |beta: f64, weighted: bool| {
            beta_norm(v.view(), &grid, &BetaNormConfig::new(beta, weighted, h).unwrap(), 1.0).unwrap()
        };
        prop_assert!(norm(b1, false) <= norm(b1 + db, false) * (1.0 + 1e-12));
        // t^{2H-1} <= 1 on [0, 1]
        prop_assert!(norm(b1, true) <= norm(b1, false) * (1.0 + 1e-12));
    }

    #[test]
    fn theorem_beta_increases_in_c_and_l(c in 0.01f64..5.0, dc in 0.0f64..1.0, l in 0.0f64..4.0, dl in 0.0f64..1.0, m in 0.1f64..10.0) {
        let b = theorem_beta(c, l, m);
        prop_assert!(theorem_beta(c + dc, l, m) >= b);
        prop_assert!(theorem_beta(c, l + dl, m) >= b);
    }

    #[test]
    fn dh_weight_band_is_ordered(t in 0.001f64..10.0, h in 0.5f64..0.99, m in 1.0f64..10.0) {
        let (lo, hi) = dh_weight(t, Hurst::new(h).unwrap(), m).unwrap();
        prop_assert!(lo <= hi);
    }

    #[test]
    fn constant_delays_certify_unit_l(delta in 0.0f64..1.0, theta in 0.0f64..0.5) {
        let grid = TimeGrid::new(1.0, 0.5, 60).unwrap();
        let d = DelayStructure::constant(delta, delta, theta, theta, 0.5);
        let report = validate_delays(&d, &grid).unwrap();
        prop_assert!((report.l - 1.0).abs() < 1e-9, "L = {}", report.l);
    }

    #[test]
    fn ordering_of_a_solution_with_itself_is_clean(vals in sampled(40 * 9), shift in 0.0f64..1.0) {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let mut a = SolutionPair::zeros(40, &grid);
        a.y.assign(&Array2::from_shape_vec((40, 9), vals).unwrap());
        prop_assert_eq!(check_ordering(&a, &a, 0.0).unwrap().violation_fraction, 0.0);
        let mut b = a.clone();
        b.y.mapv_inplace(|x| x + shift);
        let r = check_ordering(&a, &b, 0.0).unwrap();
        prop_assert_eq!(r.violation_fraction, 0.0);
        prop_assert!(r.max_violation <= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lipschitz_probe_brackets_affine_constants(
        y in -2.0f64..2.0, u in -2.0f64..2.0, ph in -2.0f64..2.0, c0 in -1.0f64..1.0,
    ) {
        let coeffs = LinearCoefficients { y, u, phi: ph, constant: c0, ..Default::default() };
        let truth = y.abs().max(u.abs()).max(ph.abs());
        let g = GeneratorSpec::linear(coeffs, None);
        let est = lipschitz_probe(&g, Hurst::new(0.7).unwrap(), 1.0, 2000, 3).unwrap();
        prop_assert!(est.estimate >= 0.9 * truth - 1e-12 && est.estimate <= truth + 0.05,
            "estimate {} vs {truth}", est.estimate);
    }
}
