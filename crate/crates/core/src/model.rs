//! Objective functionals, their Riemannian gradients and curvature estimates.
//!
//! Model I fits `S ∘ S` to `Q (D(Λ) + V) Qᵀ`; Model II inserts the SL(2)
//! blocks `T_ab` around `D(Λ) + V`. Both share one code path: for Model I the
//! `(a, b)` slots are ignored on evaluation and zero in the gradient.

use nalgebra::DVector;
use thiserror::Error;

use crate::kernel::{skew_part, Matrix};
use crate::manifold::{ManifoldError, Point, ProductManifold, RetractionMode, Tangent, TransportMode};
use crate::spectra::{build_d, Mask, Spectrum};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("direction is (numerically) zero")]
    ZeroDirection,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Model I: `(a, b)` frozen at `(1, 0)`.
    #[default]
    Isospectral,
    /// Model II: `(a, b)` free.
    Sl2Extended,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Isospectral => "I",
            ModelKind::Sl2Extended => "II",
        }
    }
}

/// `T_ab` and its inverse as dense matrices.
pub fn build_tab(a: &[f64], b: &[f64], s: usize) -> (Matrix, Matrix) {
    let n = s + 2 * a.len();
    let mut t = Matrix::identity(n, n);
    let mut inv = Matrix::identity(n, n);
    for (k, (&alpha, &beta)) in a.iter().zip(b).enumerate() {
        let p = s + 2 * k;
        t[(p, p)] = alpha;
        t[(p, p + 1)] = beta;
        t[(p + 1, p + 1)] = 1.0 / alpha;
        inv[(p, p)] = 1.0 / alpha;
        inv[(p, p + 1)] = -beta;
        inv[(p + 1, p + 1)] = alpha;
    }
    (t, inv)
}

/// `sqrt(2 F)`, the Frobenius residual `‖S∘S − G‖_F`.
pub fn residual(value: f64) -> f64 {
    (2.0 * value).sqrt()
}

/// The candidate stochastic matrix `S ∘ S`.
pub fn recover_stochastic(x: &Point) -> Matrix {
    x.s.component_mul(&x.s)
}

/// Quantities shared between an evaluation and its gradient.
#[derive(Debug, Clone)]
pub struct EvalCache {
    /// `T_ab (D + V) T_ab⁻¹`.
    pub w: Matrix,
    /// `Q W Qᵀ`.
    pub g: Matrix,
    /// `S ∘ S − G`.
    pub h: Matrix,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub cache: EvalCache,
}

/// A prescribed spectrum together with the chosen model.
#[derive(Debug, Clone)]
pub struct Problem {
    spectrum: Spectrum,
    d: Matrix,
    manifold: ProductManifold,
    kind: ModelKind,
}

impl Problem {
    pub fn new(spectrum: Spectrum, kind: ModelKind) -> Self {
        let d = build_d(&spectrum);
        let manifold = ProductManifold::new(Mask::for_spectrum(&spectrum));
        Self { spectrum, d, manifold, kind }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn manifold(&self) -> &ProductManifold {
        &self.manifold
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.spectrum.n()
    }

    fn uses_tab(&self, x: &Point) -> bool {
        self.kind == ModelKind::Sl2Extended && x.a.iter().zip(x.b.iter()).any(|(&a, &b)| a != 1.0 || b != 0.0)
    }

    /// `T_ab (D + V) T_ab⁻¹` (or `D + V` when `T_ab` is the identity).
    pub fn inner_matrix(&self, x: &Point) -> Matrix {
        let mut m = &self.d + &x.v;
        if self.uses_tab(x) {
            let s = self.spectrum.s();
            for k in 0..x.t() {
                let (alpha, beta) = (x.a[k], x.b[k]);
                let p = s + 2 * k;
                // Rows: T from the left.
                for j in 0..m.ncols() {
                    let (u, v) = (m[(p, j)], m[(p + 1, j)]);
                    m[(p, j)] = alpha * u + beta * v;
                    m[(p + 1, j)] = v / alpha;
                }
                // Columns: T⁻¹ = [[1/α, −β], [0, α]] from the right.
                for i in 0..m.nrows() {
                    let (u, v) = (m[(i, p)], m[(i, p + 1)]);
                    m[(i, p)] = u / alpha;
                    m[(i, p + 1)] = alpha * v - beta * u;
                }
            }
        }
        m
    }

    pub fn eval(&self, x: &Point) -> Evaluation {
        let w = self.inner_matrix(x);
        let g = &x.q * &w * x.q.transpose();
        let h = x.s.component_mul(&x.s) - &g;
        let value = 0.5 * h.norm_squared();
        Evaluation { value, cache: EvalCache { w, g, h } }
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.eval(x).value
    }

    /// The residual map `f(x) = S ∘ S − G`.
    pub fn residual_map(&self, x: &Point) -> Matrix {
        self.eval(x).cache.h
    }

    /// Riemannian gradient at `x` from a cache produced by [`eval`](Self::eval) at `x`.
    pub fn gradient(&self, x: &Point, cache: &EvalCache) -> Tangent {
        let n = self.n();
        let t = x.t();
        let s = self.spectrum.s();
        let EvalCache { w, h, .. } = cache;

        let grad_s = crate::manifold::project_sphere_rows(&x.s, &(x.s.component_mul(h) * 2.0));

        let k = x.q.transpose() * h * &x.q;
        let sym = k.transpose() * w + &k * w.transpose();
        let grad_q = &x.q * skew_part(&(-sym));

        // −Tᵀ K T⁻ᵀ, then masked.
        let mut grad_v = -k.clone();
        let tab = self.uses_tab(x);
        if tab {
            for kk in 0..t {
                let (alpha, beta) = (x.a[kk], x.b[kk]);
                let p = s + 2 * kk;
                for j in 0..n {
                    let (u, v) = (grad_v[(p, j)], grad_v[(p + 1, j)]);
                    grad_v[(p, j)] = alpha * u;
                    grad_v[(p + 1, j)] = beta * u + v / alpha;
                }
                for i in 0..n {
                    let (u, v) = (grad_v[(i, p)], grad_v[(i, p + 1)]);
                    grad_v[(i, p)] = u / alpha - beta * v;
                    grad_v[(i, p + 1)] = alpha * v;
                }
            }
        }
        self.manifold.mask().apply_mut(&mut grad_v);

        let mut grad_a = DVector::zeros(t);
        let mut grad_b = DVector::zeros(t);
        if self.kind == ModelKind::Sl2Extended {
            // Entries of C = Wᵀ K − K Wᵀ on the 2x2 pair blocks.
            let c = |i: usize, j: usize| -> f64 { (0..n).map(|l| w[(l, i)] * k[(l, j)] - k[(i, l)] * w[(j, l)]).sum() };
            for kk in 0..t {
                let (alpha, beta) = (x.a[kk], x.b[kk]);
                let p = s + 2 * kk;
                let (c00, c01, c11) = (c(p, p), c(p, p + 1), c(p + 1, p + 1));
                let a00 = c00 / alpha - beta * c01;
                let a01 = alpha * c01;
                let a11 = alpha * c11;
                grad_a[kk] = alpha * alpha * a00 - a11;
                grad_b[kk] = a01;
            }
        }

        Tangent { s: grad_s, q: grad_q, v: grad_v, a: grad_a, b: grad_b }
    }

    /// Value and gradient together.
    pub fn eval_with_gradient(&self, x: &Point) -> (f64, Tangent) {
        let e = self.eval(x);
        let g = self.gradient(x, &e.cache);
        (e.value, g)
    }

    /// `‖ξ‖ (T⁻¹ ∇F(R_x(h ξ/‖ξ‖)) − ∇F(x)) / h`, where the far gradient is
    /// carried back to `T_x` by the chosen transport.
    pub fn hess_vec_approx(
        &self,
        x: &Point,
        xi: &Tangent,
        h: f64,
        retraction: RetractionMode,
        transport: TransportMode,
    ) -> Result<Tangent> {
        let (_, g) = self.eval_with_gradient(x);
        self.hess_vec_approx_with_grad(x, &g, xi, h, retraction, transport)
    }

    /// As [`hess_vec_approx`](Self::hess_vec_approx) with `∇F(x)` supplied.
    pub fn hess_vec_approx_with_grad(
        &self,
        x: &Point,
        grad: &Tangent,
        xi: &Tangent,
        h: f64,
        retraction: RetractionMode,
        transport: TransportMode,
    ) -> Result<Tangent> {
        let m = &self.manifold;
        let norm = m.norm(x, xi);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(ModelError::ZeroDirection);
        }
        let step = xi.scaled(h / norm);
        let z = m.retract(x, &step, retraction)?;
        let (_, gz) = self.eval_with_gradient(&z);
        let back = m.transport_back(x, &step, &gz, retraction, transport);
        Ok(back.sub(grad).scaled(norm / h))
    }

    /// Default finite-difference step for the Hessian approximation.
    pub fn hessian_step(x: &Point) -> f64 {
        1e-4 * (1.0 + x.ambient_norm())
    }

    /// `‖Df(x)[ξ]‖²_F` for the residual map, by central differences along the
    /// retraction curve through `x` in direction `ξ / ‖ξ‖`.
    pub fn gauss_newton_denominator(&self, x: &Point, xi: &Tangent, retraction: RetractionMode) -> Result<f64> {
        let m = &self.manifold;
        let norm = m.norm(x, xi);
        if !(norm >= 1e-12) || !norm.is_finite() {
            return Err(ModelError::ZeroDirection);
        }
        let eps = 1e-6 * (1.0 + x.ambient_norm());
        let unit = xi.scaled(1.0 / norm);
        let fwd = self.residual_map(&m.retract(x, &unit.scaled(eps), retraction)?);
        let bwd = self.residual_map(&m.retract(x, &unit.scaled(-eps), retraction)?);
        let df = (fwd - bwd) / (2.0 * eps);
        Ok(norm * norm * df.norm_squared())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn example_problem(kind: ModelKind) -> Problem {
        let z = Complex64::new(-1.0 / 12.0, 23f64.sqrt() / 12.0);
        Problem::new(Spectrum::new(vec![1.0], vec![z]).unwrap(), kind)
    }

    #[test]
    fn tab_examples() {
        let (t, inv) = build_tab(&[1.0, 1.0], &[0.0, 0.0], 1);
        assert_eq!(t, Matrix::identity(5, 5));
        assert_eq!(inv, Matrix::identity(5, 5));
        let (t, inv) = build_tab(&[2.0], &[3.0], 0);
        assert_eq!(t, Matrix::from_row_slice(2, 2, &[2.0, 3.0, 0.0, 0.5]));
        assert_eq!(inv, Matrix::from_row_slice(2, 2, &[0.5, -3.0, 0.0, 2.0]));
        assert!((&t * &inv - Matrix::identity(2, 2)).norm() < 1e-15);
        assert!((t.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inner_matrix_matches_dense_product() {
        let p = example_problem(ModelKind::Sl2Extended);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = p.manifold().random_point(&mut rng);
        let (t, inv) = build_tab(x.a.as_slice(), x.b.as_slice(), 1);
        let dense = &t * (p.d() + &x.v) * &inv;
        assert!((p.inner_matrix(&x) - dense).norm() < 1e-13);
    }

    #[test]
    fn residual_examples() {
        assert_eq!(residual(0.0), 0.0);
        assert_eq!(residual(0.5), 1.0);
        assert!((residual(5e-25) - 1e-12).abs() < 1e-27);
    }

    #[test]
    fn models_agree_at_identity_tab() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p1 = example_problem(ModelKind::Isospectral);
        let p2 = example_problem(ModelKind::Sl2Extended);
        let mut x = p1.manifold().random_point(&mut rng);
        x.a.fill(1.0);
        x.b.fill(0.0);
        assert_eq!(p1.value(&x), p2.value(&x));
    }

    #[test]
    fn recover_examples() {
        let x = Point {
            s: Matrix::identity(3, 3),
            q: Matrix::identity(3, 3),
            v: Matrix::zeros(3, 3),
            a: DVector::zeros(0),
            b: DVector::zeros(0),
        };
        assert_eq!(recover_stochastic(&x), Matrix::identity(3, 3));
    }

    #[test]
    fn zero_direction_guards() {
        let p = example_problem(ModelKind::Sl2Extended);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = p.manifold().random_point(&mut rng);
        let tiny = p.manifold().random_tangent(&x, &mut rng).scaled(1e-14);
        assert!(matches!(
            p.gauss_newton_denominator(&x, &tiny, RetractionMode::QrNormalize),
            Err(ModelError::ZeroDirection)
        ));
        let zero = Tangent::zeros(3, 1);
        assert!(matches!(
            p.hess_vec_approx(&x, &zero, 1e-4, RetractionMode::QrNormalize, TransportMode::Projection),
            Err(ModelError::ZeroDirection)
        ));
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(kind: ModelKind, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spectrum =
            Spectrum::new(vec![1.0, 0.2, -0.1], vec![Complex64::new(0.1, 0.3), Complex64::new(-0.2, 0.1)]).unwrap();
        let p = Problem::new(spectrum, kind);
        let m = p.manifold();
        let x = m.random_point(&mut rng);
        let xi = m.random_tangent(&x, &mut rng);
        let (_, g) = p.eval_with_gradient(&x);
        let analytic = m.inner(&x, &g, &xi);
        let h = 1e-6;
        let f = |c: f64| p.value(&m.retract(&x, &xi.scaled(c), RetractionMode::QrNormalize).unwrap());
        let fd = (f(h) - f(-h)) / (2.0 * h);
        (analytic - fd).abs() / analytic.abs().max(1e-8)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            assert!(fd_check(ModelKind::Isospectral, seed) < 1e-5, "model I seed {seed}");
            assert!(fd_check(ModelKind::Sl2Extended, seed) < 1e-5, "model II seed {seed}");
        }
    }
}
