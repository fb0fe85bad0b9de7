mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiep::kernel::{self, Matrix};
use stiep::manifold::{Point, RetractionMode, Tangent, TransportMode};
use stiep::model::*;
use stiep::spectra::{sample_stochastic, Spectrum};

const KINDS: [ModelKind; 2] = [ModelKind::Isospectral, ModelKind::Sl2Extended];

/// A random stochastic matrix with only real eigenvalues, decomposed as
/// `Q (D + V) Qᵀ` through its real Schur form.
fn exact_point(n: usize, rng: &mut ChaCha8Rng) -> (Problem, Point) {
    loop {
        let a = sample_stochastic(n, rng);
        let schur = kernel::real_schur(&a).unwrap();
        if schur.blocks().iter().any(|b| b.1 == 2) {
            continue;
        }
        let diag: Vec<f64> = (0..n).map(|i| schur.t[(i, i)]).collect();
        let spectrum = Spectrum::real_only(diag).unwrap();
        let mut v = schur.t.clone();
        for i in 0..n {
            v[(i, i)] = 0.0;
        }
        let x = Point { s: a.map(f64::sqrt), q: schur.q, v, a: DVector::zeros(0), b: DVector::zeros(0) };
        return (Problem::new(spectrum, ModelKind::Isospectral), x);
    }
}

fn fd_directional(p: &Problem, x: &Point, xi: &Tangent, mode: RetractionMode, h: f64) -> f64 {
    let m = p.manifold();
    let f = |c: f64| p.value(&m.retract(x, &xi.scaled(c), mode).unwrap());
    (f(h) - f(-h)) / (2.0 * h)
}

#[test]
fn rounded_decomposition_of_counterexample() {
    let x = common::rounded_decomposition();
    let p2 = Problem::new(common::example_spectrum(), ModelKind::Sl2Extended);
    p2.manifold().check_point(&Point { q: kernel::qf(&x.q).unwrap(), ..x.clone() }).unwrap();
    let f = p2.value(&x);
    assert!(f <= 1e-6, "F = {f:e}");
    // The same (S, Q, V) is far from a zero of the isospectral model.
    let p1 = Problem::new(common::example_spectrum(), ModelKind::Isospectral);
    assert!(p1.value(&x) > 1e-3);
}

#[test]
fn exact_decomposition_has_zero_value_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for n in [3, 5, 8] {
        let (p, x) = exact_point(n, &mut rng);
        let (f, g) = p.eval_with_gradient(&x);
        assert!(f <= 1e-20, "F = {f:e}");
        assert!(g.ambient_norm() <= 1e-9);
    }
}

#[test]
fn gradient_matches_finite_differences_on_mixed_spectra() {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    for kind in KINDS {
        for _ in 0..40 {
            let n = rng.random_range(3..=10);
            let t = rng.random_range(0..=(n - 1) / 2);
            let p = Problem::new(common::random_spectrum(n - 2 * t, t, &mut rng), kind);
            let m = p.manifold();
            let x = m.random_point(&mut rng);
            let xi = m.random_tangent(&x, &mut rng);
            let (_, g) = p.eval_with_gradient(&x);
            let analytic = m.inner(&x, &g, &xi);
            let fd = fd_directional(&p, &x, &xi, RetractionMode::QrNormalize, 1e-6);
            let rel = (analytic - fd).abs() / analytic.abs().max(1e-6);
            assert!(rel <= 1e-5, "{kind:?}: analytic {analytic:e}, fd {fd:e}");
            if kind == ModelKind::Isospectral {
                assert!(g.a.iter().chain(g.b.iter()).all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn positive_slot_gradient_follows_scaled_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    let p = Problem::new(common::random_spectrum(2, 2, &mut rng), ModelKind::Sl2Extended);
    let m = p.manifold();
    let mut x = m.random_point(&mut rng);
    x.a.fill(1.0);
    x.b.fill(0.0);
    let (_, g) = p.eval_with_gradient(&x);
    for k in 0..2 {
        let mut xi = Tangent::zeros(6, 2);
        xi.a[k] = 1.0;
        let fd = fd_directional(&p, &x, &xi, RetractionMode::Exponential, 1e-6);
        assert!((g.a[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "a[{k}]: {} vs {fd}", g.a[k]);
    }
    // Away from a = 1 the metric weight 1/a² enters.
    x.a[0] = 2.5;
    let (_, g) = p.eval_with_gradient(&x);
    let mut xi = Tangent::zeros(6, 2);
    xi.a[0] = 1.0;
    let fd = fd_directional(&p, &x, &xi, RetractionMode::Exponential, 1e-6);
    assert!((g.a[0] / (2.5 * 2.5) - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
}

#[test]
fn value_is_invariant_under_column_sign_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    for kind in KINDS {
        let p = Problem::new(common::random_spectrum(3, 2, &mut rng), kind);
        let x = p.manifold().random_point(&mut rng);
        for j in 0..3 {
            let mut e = Matrix::identity(7, 7);
            e[(j, j)] = -1.0;
            let y = Point { q: &x.q * &e, v: &e * &x.v * &e, ..x.clone() };
            assert!((p.value(&x) - p.value(&y)).abs() <= 1e-12);
        }
    }
}

#[test]
fn hessian_is_nonnegative_at_a_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (p, x) = exact_point(6, &mut rng);
    let m = p.manifold();
    for _ in 0..20 {
        let xi = m.random_tangent(&x, &mut rng);
        for transport in [TransportMode::Projection, TransportMode::Parallel] {
            let hv =
                p.hess_vec_approx(&x, &xi, Problem::hessian_step(&x), RetractionMode::QrNormalize, transport).unwrap();
            assert!(m.inner(&x, &xi, &hv) >= -1e-8);
        }
    }
}

#[test]
fn hessian_approximation_is_nearly_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let p = Problem::new(common::random_spectrum(3, 2, &mut rng), ModelKind::Sl2Extended);
    let m = p.manifold();
    let x = m.random_point(&mut rng);
    let xi = m.random_tangent(&x, &mut rng);
    let h = Problem::hessian_step(&x);
    let one = p.hess_vec_approx(&x, &xi, h, RetractionMode::QrNormalize, TransportMode::Projection).unwrap();
    let two =
        p.hess_vec_approx(&x, &xi.scaled(2.0), h, RetractionMode::QrNormalize, TransportMode::Projection).unwrap();
    assert!(two.sub(&one.scaled(2.0)).ambient_norm() <= 10.0 * h * one.ambient_norm());
}

/// `‖Q T Ξ T⁻¹ Qᵀ‖²_F`, the exact curvature of `F` along a pure `V` direction.
fn v_slice_curvature(p: &Problem, x: &Point, xi_v: &Matrix) -> f64 {
    let s = p.spectrum().s();
    let (t, inv) = match p.kind() {
        ModelKind::Isospectral => build_tab(&vec![1.0; x.t()], &vec![0.0; x.t()], s),
        ModelKind::Sl2Extended => build_tab(x.a.as_slice(), x.b.as_slice(), s),
    };
    (&x.q * &t * xi_v * inv * x.q.transpose()).norm_squared()
}

#[test]
fn curvature_estimates_are_exact_on_the_v_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(406);
    for kind in KINDS {
        let p = Problem::new(common::random_spectrum(3, 2, &mut rng), kind);
        let m = p.manifold();
        let x = m.random_point(&mut rng);
        let mut xi = Tangent::zeros(7, 2);
        xi.v = m.mask().apply(&m.random_tangent(&x, &mut rng).v);
        let exact = v_slice_curvature(&p, &x, &xi.v);

        let hv = p
            .hess_vec_approx(&x, &xi, Problem::hessian_step(&x), RetractionMode::QrNormalize, TransportMode::Projection)
            .unwrap();
        let approx = m.inner(&x, &xi, &hv);
        assert!((approx - exact).abs() <= 1e-6 * exact, "{approx} vs {exact}");

        let gn = p.gauss_newton_denominator(&x, &xi, RetractionMode::QrNormalize).unwrap();
        assert!((gn - exact).abs() <= 1e-6 * exact, "{gn} vs {exact}");
    }
}

#[test]
fn gauss_newton_denominator_is_quadratic_in_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(407);
    let p = Problem::new(common::random_spectrum(4, 1, &mut rng), ModelKind::Sl2Extended);
    let m = p.manifold();
    let x = m.random_point(&mut rng);
    let xi = m.random_tangent(&x, &mut rng);
    let base = p.gauss_newton_denominator(&x, &xi, RetractionMode::QrNormalize).unwrap();
    for c in [0.1, 3.0, 17.0] {
        let scaled = p.gauss_newton_denominator(&x, &xi.scaled(c), RetractionMode::QrNormalize).unwrap();
        assert!((scaled - c * c * base).abs() <= 1e-6 * c * c * base);
    }
}

#[test]
fn recovery_from_square_roots() {
    let a = common::counterexample_matrix();
    let x = Point { s: a.map(f64::sqrt), ..common::rounded_decomposition() };
    let back = recover_stochastic(&x);
    assert!((back - &a).abs().max() <= f64::EPSILON);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recovered_matrices_are_stochastic(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=12);
        let p = Problem::new(common::random_spectrum(n, 0, &mut rng), ModelKind::Isospectral);
        let x = p.manifold().random_point(&mut rng);
        let a = recover_stochastic(&x);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
        for row in a.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn tab_blocks_have_unit_determinant(a in 1e-3f64..1e3, b in -1e3f64..1e3) {
        let (t, inv) = build_tab(&[a], &[b], 1);
        prop_assert!((t.determinant() - 1.0).abs() <= 1e-14 * (1.0 + a * (1.0 / a)));
        prop_assert!((&t * &inv - Matrix::identity(3, 3)).norm() <= 1e-13 * (1.0 + a * b.abs()));
    }

    #[test]
    fn models_coincide_at_identity_blocks(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectrum = common::random_spectrum(2, 2, &mut rng);
        let p1 = Problem::new(spectrum.clone(), ModelKind::Isospectral);
        let p2 = Problem::new(spectrum, ModelKind::Sl2Extended);
        let mut x = p1.manifold().random_point(&mut rng);
        x.a.fill(1.0);
        x.b.fill(0.0);
        prop_assert_eq!(p1.value(&x), p2.value(&x));
    }
}
