mod common;

use common::{composite_gl, jacobi_explicit, weighted_integral};
use polyconv::polybasis::{
    build_basis, discretize_basis, eval_poly, orthogonality_defect, resample_basis, weighted_inner_product,
    JacobiParams,
};
use proptest::prelude::*;

#[test]
fn recurrence_matches_explicit_sum() {
    for &(a, b) in &[(-0.25, -0.25), (0.0, 0.0), (-0.5, -0.5), (1.5, -0.7), (3.0, 2.0)] {
        let basis = build_basis(JacobiParams::new(a, b, 12).unwrap()).unwrap();
        for n in 0..=12 {
            for i in 0..=40 {
                let x = -1.0 + i as f64 / 20.0;
                let want = jacobi_explicit(n, a, b, x);
                let got = eval_poly(&basis, n, x).unwrap();
                assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "n={n} x={x} ({a},{b}): {got} vs {want}");
            }
        }
    }
}

#[test]
fn inner_products_match_graded_quadrature() {
    for &(a, b) in &[(-0.25, -0.25), (0.5, -0.5), (0.0, 0.0)] {
        let basis = build_basis(JacobiParams::new(a, b, 6).unwrap()).unwrap();
        for n in 0..=6 {
            for m in n..=6 {
                let lib = weighted_inner_product(&basis, n, m).unwrap();
                let oracle = weighted_integral(|t| jacobi_explicit(n, a, b, t) * jacobi_explicit(m, a, b, t), a, b);
                let diag = weighted_integral(|t| jacobi_explicit(n, a, b, t).powi(2), a, b);
                assert!((lib - oracle).abs() <= 1e-9 * diag, "({a},{b}) n={n} m={m}: {lib} vs {oracle}");
            }
        }
    }
}

#[test]
fn defect_rejects_diagonal() {
    let basis = build_basis(JacobiParams::new(-0.25, -0.25, 4).unwrap()).unwrap();
    assert!(orthogonality_defect(&basis, 2, 2).is_err());
    assert!(orthogonality_defect(&basis, 1, 3).unwrap() < 1e-12);
}

#[test]
fn bins_match_composite_quadrature() {
    let (a, b) = (0.3, -0.6);
    let basis = build_basis(JacobiParams::new(a, b, 6).unwrap()).unwrap();
    for k in [1, 3, 7, 16] {
        let db = discretize_basis(&basis, k, 0.01).unwrap();
        for n in 0..=6 {
            for j in 0..k {
                let lo = -1.0 + 2.0 * j as f64 / k as f64;
                let hi = -1.0 + 2.0 * (j + 1) as f64 / k as f64;
                let want = composite_gl(|t| jacobi_explicit(n, a, b, t), lo, hi, 8, 4);
                assert!((db.row(n)[j] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn standard_layer_configuration() {
    let db = discretize_basis(&build_basis(JacobiParams::new(-0.25, -0.25, 4).unwrap()).unwrap(), 10, 0.01).unwrap();
    assert_eq!((db.basis_size(), db.num_bins()), (5, 10));
    assert!((db.row(0).iter().sum::<f64>() - 2.0).abs() < 1e-14);
    assert!((db.window() - 0.1).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Bins tile [-1, 1], so each row sums to the integral of its polynomial
    // whatever the bin count.
    #[test]
    fn row_sums_are_bin_count_invariant(
        a in -0.9f64..2.0, b in -0.9f64..2.0, n in 0usize..=8, k1 in 1usize..40, k2 in 1usize..40,
    ) {
        let basis = build_basis(JacobiParams::new(a, b, 8).unwrap()).unwrap();
        let d1 = discretize_basis(&basis, k1, 0.01).unwrap();
        let d2 = resample_basis(&d1, k2).unwrap();
        let s1: f64 = d1.row(n).iter().sum();
        let s2: f64 = d2.row(n).iter().sum();
        prop_assert!((s1 - s2).abs() < 1e-12 * s1.abs().max(1.0));
        prop_assert!((d2.window() - d1.window()).abs() < 1e-15);
        prop_assert!((d2.input_scale() * d2.bin_size() - d1.bin_size()).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_are_rejected(a in -5.0f64..-1.0, n in 33usize..40) {
        prop_assert!(JacobiParams::new(a, 0.0, 2).is_err());
        prop_assert!(JacobiParams::new(0.0, a, 2).is_err());
        prop_assert!(JacobiParams::new(0.0, 0.0, n).is_err());
    }
}
