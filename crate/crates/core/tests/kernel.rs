mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stiep::kernel::{self, Matrix};
use stiep::spectra::greedy_distance;

fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
}

#[test]
fn qf_gives_upper_triangular_positive_r() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let a = gaussian(n, &mut rng);
        let q = kernel::qf(&a).unwrap();
        assert!((q.transpose() * &q - Matrix::identity(n, n)).norm() <= 1e-12 * n as f64);
        let r = q.transpose() * &a;
        for j in 0..n {
            assert!(r[(j, j)] > 0.0);
            for i in j + 1..n {
                assert!(r[(i, j)].abs() <= 1e-10 * (1.0 + a.norm()), "R[{i},{j}] = {}", r[(i, j)]);
            }
        }
    }
}

#[test]
fn schur_reconstructs_and_is_quasi_triangular() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let a = gaussian(n, &mut rng);
        let schur = kernel::real_schur(&a).unwrap();
        let back = &schur.q * &schur.t * schur.q.transpose();
        assert!((back - &a).norm() <= 1e-10 * (1.0 + a.norm()));
        // No two consecutive nonzero subdiagonal entries.
        for i in 1..n.saturating_sub(1) {
            assert!(schur.t[(i, i - 1)] == 0.0 || schur.t[(i + 1, i)] == 0.0);
        }
        for j in 0..n {
            for i in j + 2..n {
                assert_eq!(schur.t[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn eigenvalues_match_characteristic_polynomial_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let a = gaussian(n, &mut rng);
        let ours = kernel::eigenvalues(&a).unwrap();
        let oracle = common::poly_roots(&common::char_poly(&a));
        let d = greedy_distance(&ours, &oracle).unwrap();
        assert!(d <= 1e-8, "n = {n}, distance {d:e}");
    }
}

#[test]
fn real_matrix_spectrum_is_self_conjugate() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..30 {
        let n = rng.random_range(2..=12);
        let eig = kernel::eigenvalues(&gaussian(n, &mut rng)).unwrap();
        let conj: Vec<Complex64> = eig.iter().map(|z| z.conj()).collect();
        assert!(greedy_distance(&eig, &conj).unwrap() <= 1e-10);
    }
}

#[test]
fn skew_exponential_has_unit_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..50 {
        let n = rng.random_range(1..=12);
        let g = gaussian(n, &mut rng) * rng.random_range(0.01..3.0);
        let k = (&g - g.transpose()) * 0.5;
        let e = kernel::skew_expm(&k).unwrap();
        assert!((e.transpose() * &e - Matrix::identity(n, n)).norm() <= 1e-12 * n as f64);
        assert!((e.determinant() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn skew_exponential_of_zero_is_identity() {
    assert_eq!(kernel::skew_expm(&Matrix::zeros(4, 4)).unwrap(), Matrix::identity(4, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skew_exponential_matches_rotation_closed_form(theta in -6.0f64..6.0) {
        let k = Matrix::from_row_slice(2, 2, &[0.0, theta, -theta, 0.0]);
        let e = kernel::skew_expm(&k).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[theta.cos(), theta.sin(), -theta.sin(), theta.cos()]);
        prop_assert!((e - expected).norm() <= 1e-13);
    }

    #[test]
    fn qf_is_invariant_under_positive_column_scaling(seed in 0u64..1000, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(5, &mut rng);
        let q1 = kernel::qf(&a).unwrap();
        let q2 = kernel::qf(&(&a * c)).unwrap();
        prop_assert!((q1 - q2).norm() <= 1e-12);
    }
}
