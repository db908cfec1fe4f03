mod common;

use dcadmm::dataio::{generate_moons, standardize};
use dcadmm::experiments::median;
use dcadmm::kernel::{build_kernel, nystrom_factor, spectral_bounds, KernelMatrix, KernelSpec};
use dcadmm::Error;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

#[test]
fn rbf_example_matches_scalar_formula() {
    let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
    let k = build_kernel(&x, &KernelSpec::Rbf { sigma: 0.5477 }, 0.0)
        .unwrap()
        .to_dense();
    let direct = (-1.0f64 / (2.0 * 0.5477 * 0.5477)).exp();
    assert_eq!(k[(0, 1)], direct);
    assert!((k[(0, 1)] - 0.18887).abs() < 1e-4);
    assert_eq!(k[(0, 0)], 1.0);
}

#[test]
fn linear_identity_is_identity() {
    let k = build_kernel(&DMatrix::identity(3, 3), &KernelSpec::Linear, 0.0).unwrap();
    assert_eq!(k.to_dense(), DMatrix::identity(3, 3));
}

#[test]
fn asymmetric_precomputed_kernel_is_rejected() {
    let mut k = DMatrix::identity(3, 3);
    k[(0, 1)] = 1e-3;
    let r = build_kernel(&DMatrix::zeros(3, 1), &KernelSpec::Precomputed(k), 0.0);
    assert!(matches!(r, Err(Error::Asymmetric(_))));
}

#[test]
fn spectral_bounds_examples() {
    let b = spectral_bounds(&KernelMatrix::identity(4), 1.0).unwrap();
    assert!((b.sigma_min_ktk - 1.0).abs() < 1e-12 && (b.lip_l - 2.0).abs() < 1e-12);
    assert_eq!(b.semiconvexity_m, 0.0);
    let k = KernelMatrix::dense(
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0])),
        0.0,
    )
    .unwrap();
    let b = spectral_bounds(&k, 0.5).unwrap();
    assert!((b.sigma_min_ktk - 4.0).abs() < 1e-10 && (b.lip_l - 3.0).abs() < 1e-10);
}

#[test]
fn spectral_bounds_match_dense_eigensolve() {
    for seed in 0..10 {
        let mut r = common::rng(seed);
        let k = common::random_spd(&mut r, 20, 0.05);
        let eig = SymmetricEigen::new(k.clone()).eigenvalues;
        let b = spectral_bounds(&KernelMatrix::dense(k, 0.0).unwrap(), 0.7).unwrap();
        let (lo, hi) = (eig.min(), eig.max());
        assert!((b.sigma_min_ktk - lo * lo).abs() <= 1e-6 * lo * lo);
        assert!((b.lip_l - 1.4 * hi).abs() <= 1e-6 * 1.4 * hi);
    }
}

#[test]
fn low_rank_matches_densified_product() {
    for seed in 0..30 {
        let mut r = common::rng(seed);
        let g = common::random_matrix(&mut r, 12, 3, 1.0);
        let gamma = 0.25;
        let k = KernelMatrix::low_rank(g.clone(), gamma).unwrap();
        let v = common::random_matrix(&mut r, 12, 4, 1.0);
        let dense = (&g * g.transpose() + DMatrix::identity(12, 12) * gamma) * &v;
        let got = k.matvec(&v).unwrap();
        assert!((&got - &dense).norm() <= 1e-10 * dense.norm());
    }
}

#[test]
fn rank_one_action() {
    let g = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
    let k = KernelMatrix::low_rank(g.clone(), 0.0).unwrap();
    assert_eq!(k.matvec(&g).unwrap(), &g * 6.0);
}

#[test]
fn matvec_rejects_wrong_shape() {
    assert!(matches!(
        KernelMatrix::identity(3).matvec(&DMatrix::zeros(4, 1)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn nystrom_error_shrinks_with_more_landmarks_on_moons() {
    let (mut e50, mut e100) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let data = generate_moons(150, 4, 0.05, seed).unwrap();
        let x = standardize(&data.features);
        let spec = KernelSpec::Rbf { sigma: 0.5477 };
        let dense = build_kernel(&x, &spec, 0.0).unwrap().to_dense();
        let err = |l: usize| {
            let approx = nystrom_factor(&x, &spec, l, 0.0, seed).unwrap().to_dense();
            (&approx - &dense).norm() / dense.norm()
        };
        e50.push(err(50));
        e100.push(err(100));
    }
    assert!(median(&e100) < median(&e50), "{e100:?} vs {e50:?}");
}

#[test]
fn full_and_single_landmark_nystrom() {
    let mut r = common::rng(3);
    let x = common::random_matrix(&mut r, 15, 2, 1.0);
    let spec = KernelSpec::Rbf { sigma: 0.8 };
    let dense = build_kernel(&x, &spec, 0.0).unwrap().to_dense();
    let full = nystrom_factor(&x, &spec, 15, 0.0, 1).unwrap().to_dense();
    assert!((&full - &dense).norm() <= 1e-6 * dense.norm());
    let one = nystrom_factor(&x, &spec, 1, 0.0, 1).unwrap().to_dense();
    let eig = SymmetricEigen::new(one).eigenvalues;
    assert_eq!(eig.iter().filter(|&&e| e.abs() > 1e-9).count(), 1);
}

proptest! {
    #[test]
    fn shift_raises_every_eigenvalue(seed in any::<u64>(), gamma in 0.0f64..3.0) {
        let mut r = common::rng(seed);
        let k = common::random_spd(&mut r, 12, 0.0);
        let before = SymmetricEigen::new(k.clone()).eigenvalues.min();
        let shifted = KernelMatrix::dense(k, gamma).unwrap().to_dense();
        let after = SymmetricEigen::new(shifted).eigenvalues.min();
        prop_assert!(after >= before + gamma - 1e-10);
    }

    #[test]
    fn matvec_is_linear(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut r = common::rng(seed);
        let k = common::rbf_kernel(&mut r, 10, 0.6, 0.1);
        let v = common::random_matrix(&mut r, 10, 3, 1.0);
        let w = common::random_matrix(&mut r, 10, 3, 1.0);
        let lhs = k.matvec(&(&v * a + &w * b)).unwrap();
        let rhs = k.matvec(&v).unwrap() * a + k.matvec(&w).unwrap() * b;
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn regularizer_gradient_respects_lipschitz_bound(seed in any::<u64>(), nu in 0.001f64..2.0) {
        let mut r = common::rng(seed);
        let k = common::rbf_kernel(&mut r, 10, 0.6, 0.1);
        let bounds = spectral_bounds(&k, nu).unwrap();
        let a1 = common::random_matrix(&mut r, 10, 3, 1.0);
        let a2 = common::random_matrix(&mut r, 10, 3, 1.0);
        // grad f(alpha) = 2 nu K alpha
        let diff = k.matvec(&(&a1 - &a2)).unwrap() * (2.0 * nu);
        prop_assert!(diff.norm() <= bounds.lip_l * (&a1 - &a2).norm() * (1.0 + 1e-9));
    }
}
