//! Geometry of `OB(n) × O(n) × V_t × ℝ₊ᵗ × ℝᵗ`.
//!
//! The metric is Euclidean on every slot except the positive factor, which
//! carries `⟨ξ, η⟩_a = Σ ξ_k η_k / a_k²`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::kernel::{self, skew_expm, skew_part, KernelError, Matrix};
use crate::spectra::Mask;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("degenerate step: {0}")]
    DegenerateStep(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RetractionMode {
    /// Row normalization on `OB(n)`, `qf` on `O(n)`.
    #[default]
    QrNormalize,
    /// Great circles on the sphere rows, `Q Exp(Qᵀ Ξ)` on `O(n)`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportMode {
    #[default]
    Projection,
    Parallel,
}

/// A point `(S, Q, V, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub s: Matrix,
    pub q: Matrix,
    pub v: Matrix,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

/// A tangent vector (or a raw ambient perturbation) with the same slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub s: Matrix,
    pub q: Matrix,
    pub v: Matrix,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl Tangent {
    pub fn zeros(n: usize, t: usize) -> Self {
        Self {
            s: Matrix::zeros(n, n),
            q: Matrix::zeros(n, n),
            v: Matrix::zeros(n, n),
            a: DVector::zeros(t),
            b: DVector::zeros(t),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { s: &self.s * c, q: &self.q * c, v: &self.v * c, a: &self.a * c, b: &self.b * c }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Tangent) -> Self {
        Self {
            s: &self.s + &other.s * c,
            q: &self.q + &other.q * c,
            v: &self.v + &other.v * c,
            a: &self.a + &other.a * c,
            b: &self.b + &other.b * c,
        }
    }

    pub fn sub(&self, other: &Tangent) -> Self {
        self.axpy(-1.0, other)
    }

    /// Plain Euclidean inner product over all slots (ignores the metric).
    pub fn ambient_dot(&self, other: &Tangent) -> f64 {
        self.s.dot(&other.s) + self.q.dot(&other.q) + self.v.dot(&other.v) + self.a.dot(&other.a) + self.b.dot(&other.b)
    }

    pub fn ambient_norm(&self) -> f64 {
        self.ambient_dot(self).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.s
            .iter()
            .chain(self.q.iter())
            .chain(self.v.iter())
            .chain(self.a.iter())
            .chain(self.b.iter())
            .all(|v| *v == 0.0)
    }
}

impl Point {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn t(&self) -> usize {
        self.a.len()
    }

    /// Ambient Frobenius norm of all five slots together.
    pub fn ambient_norm(&self) -> f64 {
        (self.s.norm_squared()
            + self.q.norm_squared()
            + self.v.norm_squared()
            + self.a.norm_squared()
            + self.b.norm_squared())
        .sqrt()
    }

    /// Plain slot-wise difference `self - other`, as a raw perturbation.
    pub fn difference(&self, other: &Point) -> Tangent {
        Tangent {
            s: &self.s - &other.s,
            q: &self.q - &other.q,
            v: &self.v - &other.v,
            a: &self.a - &other.a,
            b: &self.b - &other.b,
        }
    }
}

fn tol(scale: f64) -> f64 {
    1e-12 * (1.0 + scale)
}

/// The product manifold for fixed `(n, s, t)`.
#[derive(Debug, Clone)]
pub struct ProductManifold {
    mask: Mask,
}

impl ProductManifold {
    pub fn new(mask: Mask) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn s(&self) -> usize {
        self.mask.s()
    }

    pub fn t(&self) -> usize {
        self.mask.t()
    }

    fn check_shape(&self, x: &Point) -> Result<()> {
        let n = self.n();
        let square = |m: &Matrix| m.nrows() == n && m.ncols() == n;
        if !(square(&x.s) && square(&x.q) && square(&x.v)) || x.a.len() != self.t() || x.b.len() != self.t() {
            return Err(ManifoldError::InvalidPoint(format!("slot shapes do not match n = {n}, t = {}", self.t())));
        }
        Ok(())
    }

    /// Checks every point invariant: unit rows, orthogonality, mask, positivity.
    pub fn check_point(&self, x: &Point) -> Result<()> {
        self.check_shape(x)?;
        let n = self.n();
        for (i, row) in x.s.row_iter().enumerate() {
            let err = (row.norm_squared() - 1.0).abs();
            if err > 1e-12 {
                return Err(ManifoldError::InvalidPoint(format!("row {i} of S has squared norm off by {err:e}")));
            }
        }
        let orth = (x.q.transpose() * &x.q - Matrix::identity(n, n)).norm();
        if orth > 1e-12 * n as f64 {
            return Err(ManifoldError::InvalidPoint(format!("Q is not orthogonal (defect {orth:e})")));
        }
        if !self.mask.contains(&x.v) {
            return Err(ManifoldError::InvalidPoint("V has entries outside the mask".into()));
        }
        if let Some(k) = x.a.iter().position(|&a| !(a > 0.0)) {
            return Err(ManifoldError::InvalidPoint(format!("a[{k}] is not positive")));
        }
        Ok(())
    }

    /// Whether `xi` satisfies the tangent invariants at `x`.
    pub fn is_tangent(&self, x: &Point, xi: &Tangent) -> bool {
        let diag_ok = x.s.row_iter().zip(xi.s.row_iter()).all(|(s, e)| s.dot(&e).abs() <= tol(e.norm()));
        let w = x.q.transpose() * &xi.q;
        let skew_ok = (&w + w.transpose()).norm() <= tol(w.norm());
        diag_ok && skew_ok && self.mask.contains(&xi.v)
    }

    /// Orthogonal projection of a raw perturbation onto `T_x`.
    pub fn project(&self, x: &Point, raw: &Tangent) -> Tangent {
        Tangent {
            s: project_sphere_rows(&x.s, &raw.s),
            q: project_orthogonal(&x.q, &raw.q),
            v: self.mask.apply(&raw.v),
            a: raw.a.clone(),
            b: raw.b.clone(),
        }
    }

    pub fn inner(&self, x: &Point, xi: &Tangent, eta: &Tangent) -> f64 {
        let pos: f64 = xi.a.iter().zip(eta.a.iter()).zip(x.a.iter()).map(|((u, w), a)| u * w / (a * a)).sum();
        xi.s.dot(&eta.s) + xi.q.dot(&eta.q) + xi.v.dot(&eta.v) + pos + xi.b.dot(&eta.b)
    }

    pub fn norm(&self, x: &Point, xi: &Tangent) -> f64 {
        self.inner(x, xi, xi).sqrt()
    }

    /// Maps a tangent vector to a new point. A zero slot leaves the
    /// corresponding component untouched, so `retract(x, 0) == x` bitwise.
    pub fn retract(&self, x: &Point, xi: &Tangent, mode: RetractionMode) -> Result<Point> {
        let s = match mode {
            RetractionMode::QrNormalize => normalize_rows(&x.s, &xi.s)?,
            RetractionMode::Exponential => sphere_exp_rows(&x.s, &xi.s),
        };
        let q = if xi.q.iter().all(|v| *v == 0.0) {
            x.q.clone()
        } else {
            match mode {
                RetractionMode::QrNormalize => kernel::qf(&(&x.q + &xi.q)).map_err(|e| match e {
                    KernelError::SingularInput { .. } => {
                        ManifoldError::DegenerateStep(format!("Q + Ξ is singular ({e})"))
                    }
                    other => ManifoldError::Kernel(other),
                })?,
                RetractionMode::Exponential => &x.q * skew_expm(&skew_part(&(x.q.transpose() * &xi.q)))?,
            }
        };
        let a = x.a.zip_map(&xi.a, |a, e| if e == 0.0 { a } else { a * (e / a).exp() });
        if let Some(k) = a.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(ManifoldError::DegenerateStep(format!("a[{k}] left the positive half-line")));
        }
        Ok(Point { s, q, v: &x.v + &xi.v, a, b: &x.b + &xi.b })
    }

    /// Transports `xi ∈ T_x` along the retraction curve of `theta`.
    pub fn transport(
        &self,
        x: &Point,
        theta: &Tangent,
        xi: &Tangent,
        retraction: RetractionMode,
        mode: TransportMode,
    ) -> Result<Tangent> {
        let z = self.retract(x, theta, retraction)?;
        Ok(self.transport_to(x, &z, theta, xi, retraction, mode))
    }

    /// As [`transport`](Self::transport) when `z = retract(x, theta)` is already known.
    pub fn transport_to(
        &self,
        x: &Point,
        z: &Point,
        theta: &Tangent,
        xi: &Tangent,
        retraction: RetractionMode,
        mode: TransportMode,
    ) -> Tangent {
        match mode {
            TransportMode::Projection => self.project(z, xi),
            TransportMode::Parallel => {
                let raw = Tangent {
                    s: rotate_sphere_rows(&x.s, &theta.s, &xi.s, retraction, 1.0),
                    q: if theta.q.iter().all(|v| *v == 0.0) {
                        xi.q.clone()
                    } else {
                        let e = half_step_exp(&x.q, &theta.q);
                        &x.q * &e * x.q.transpose() * &xi.q * &e
                    },
                    v: xi.v.clone(),
                    a: DVector::from_iterator(
                        xi.a.len(),
                        xi.a.iter().zip(theta.a.iter()).zip(x.a.iter()).map(|((e, th), a)| (th / a).exp() * e),
                    ),
                    b: xi.b.clone(),
                };
                self.project(z, &raw)
            }
        }
    }

    /// Carries `eta ∈ T_z`, `z = retract(x, theta)`, back to `T_x`.
    ///
    /// Projection mode projects onto `T_x`; parallel mode applies the inverse
    /// of the forward parallel map and then projects.
    pub fn transport_back(
        &self,
        x: &Point,
        theta: &Tangent,
        eta: &Tangent,
        retraction: RetractionMode,
        mode: TransportMode,
    ) -> Tangent {
        match mode {
            TransportMode::Projection => self.project(x, eta),
            TransportMode::Parallel => {
                let raw = Tangent {
                    s: rotate_sphere_rows(&x.s, &theta.s, &eta.s, retraction, -1.0),
                    q: if theta.q.iter().all(|v| *v == 0.0) {
                        eta.q.clone()
                    } else {
                        let e = half_step_exp(&x.q, &theta.q).transpose();
                        &x.q * &e * x.q.transpose() * &eta.q * &e
                    },
                    v: eta.v.clone(),
                    a: DVector::from_iterator(
                        eta.a.len(),
                        eta.a.iter().zip(theta.a.iter()).zip(x.a.iter()).map(|((e, th), a)| (-th / a).exp() * e),
                    ),
                    b: eta.b.clone(),
                };
                self.project(x, &raw)
            }
        }
    }

    /// Random point: Gaussian rows normalized, `qf` of a Gaussian matrix,
    /// masked Gaussian `V`, log-normal `a`, Gaussian `b`.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let n = self.n();
        let t = self.t();
        let s = loop {
            let g = gaussian(n, n, rng);
            if let Ok(s) = normalize_rows(&Matrix::zeros(n, n), &g) {
                break s;
            }
        };
        let q = loop {
            if let Ok(q) = kernel::qf(&gaussian(n, n, rng)) {
                break q;
            }
        };
        let v = self.mask.apply(&gaussian(n, n, rng));
        let a = DVector::from_iterator(t, (0..t).map(|_| (0.3 * rng.sample::<f64, _>(StandardNormal)).exp()));
        let b = DVector::from_iterator(t, (0..t).map(|_| rng.sample::<f64, _>(StandardNormal)));
        Point { s, q, v, a, b }
    }

    /// Gaussian raw perturbation projected onto `T_x` and scaled to unit metric norm.
    pub fn random_tangent<R: Rng + ?Sized>(&self, x: &Point, rng: &mut R) -> Tangent {
        let n = self.n();
        let t = self.t();
        loop {
            let raw = Tangent {
                s: gaussian(n, n, rng),
                q: gaussian(n, n, rng),
                v: gaussian(n, n, rng),
                a: DVector::from_iterator(t, (0..t).map(|_| rng.sample::<f64, _>(StandardNormal))),
                b: DVector::from_iterator(t, (0..t).map(|_| rng.sample::<f64, _>(StandardNormal))),
            };
            let xi = self.project(x, &raw);
            let norm = self.norm(x, &xi);
            if norm > 1e-12 {
                return xi.scaled(1.0 / norm);
            }
        }
    }
}

/// `‖log a − log ã‖₂`, the geodesic distance for the metric `ξη/a²`.
pub fn geodesic_distance_pos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.ln() - y.ln()).powi(2)).sum::<f64>().sqrt()
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `Ξ − diag(S Ξᵀ) S`.
pub fn project_sphere_rows(s: &Matrix, xi: &Matrix) -> Matrix {
    let mut out = xi.clone();
    for i in 0..s.nrows() {
        let c = s.row(i).dot(&xi.row(i));
        let row = xi.row(i) - s.row(i) * c;
        out.row_mut(i).copy_from(&row);
    }
    out
}

/// `Q · skew(Qᵀ Ξ)`.
pub fn project_orthogonal(q: &Matrix, xi: &Matrix) -> Matrix {
    q * skew_part(&(q.transpose() * xi))
}

fn normalize_rows(s: &Matrix, xi: &Matrix) -> Result<Matrix> {
    let mut out = s.clone();
    for i in 0..s.nrows() {
        if xi.row(i).iter().all(|v| *v == 0.0) {
            continue;
        }
        let row = s.row(i) + xi.row(i);
        let norm = row.norm();
        if norm < 1e-14 {
            return Err(ManifoldError::DegenerateStep(format!("row {i} of S + Ξ vanishes")));
        }
        out.row_mut(i).copy_from(&(row / norm));
    }
    Ok(out)
}

fn sphere_exp_rows(s: &Matrix, xi: &Matrix) -> Matrix {
    let mut out = s.clone();
    for i in 0..s.nrows() {
        let norm = xi.row(i).norm();
        if norm == 0.0 {
            continue;
        }
        let row = s.row(i) * norm.cos() + xi.row(i) * (norm.sin() / norm);
        out.row_mut(i).copy_from(&row);
    }
    out
}

/// Rotates each row of `xi` in the plane spanned by the base row and the
/// step direction, by the angle the retraction travels (`sign = -1` inverts).
fn rotate_sphere_rows(s: &Matrix, theta: &Matrix, xi: &Matrix, retraction: RetractionMode, sign: f64) -> Matrix {
    let mut out = xi.clone();
    for i in 0..s.nrows() {
        let len = theta.row(i).norm();
        if len == 0.0 {
            continue;
        }
        let phi = sign
            * match retraction {
                RetractionMode::Exponential => len,
                RetractionMode::QrNormalize => len.atan(),
            };
        let u = theta.row(i) / len;
        let base = s.row(i);
        let c1 = base.dot(&xi.row(i));
        let c2 = u.dot(&xi.row(i));
        let (sin, cos) = phi.sin_cos();
        // Rotation in span(base, u): base -> base cos + u sin, u -> -base sin + u cos.
        let row = xi.row(i) + base * (c1 * (cos - 1.0) - c2 * sin) + &u * (c1 * sin + c2 * (cos - 1.0));
        out.row_mut(i).copy_from(&row);
    }
    out
}

fn half_step_exp(q: &Matrix, theta: &Matrix) -> Matrix {
    let k = skew_part(&(q.transpose() * theta)) * 0.5;
    skew_expm(&k).expect("skew part is skew-symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn manifold(n: usize, s: usize, t: usize) -> ProductManifold {
        ProductManifold::new(Mask::new(n, s, t).unwrap())
    }

    #[test]
    fn projection_examples() {
        let m = manifold(3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = m.random_point(&mut rng);
        x.s.row_mut(0).copy_from(&nalgebra::RowDVector::from_vec(vec![1.0, 0.0, 0.0]));
        x.q = Matrix::identity(3, 3);
        let mut raw = Tangent::zeros(3, 1);
        raw.s[(0, 0)] = 1.0;
        raw.q = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let p = m.project(&x, &raw);
        assert_eq!(p.s.row(0).norm(), 0.0);
        assert!(p.q.norm() < 1e-15);
    }

    #[test]
    fn inner_examples() {
        let m = manifold(3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = m.random_point(&mut rng);
        x.a[0] = 2.0;
        let mut xi = Tangent::zeros(3, 1);
        xi.a[0] = 2.0;
        assert_eq!(m.inner(&x, &xi, &xi), 1.0);

        x.a[0] = 1.0;
        let u = m.random_tangent(&x, &mut rng);
        let w = m.random_tangent(&x, &mut rng);
        assert!((m.inner(&x, &u, &w) - u.ambient_dot(&w)).abs() < 1e-14);
    }

    #[test]
    fn retraction_examples() {
        let m = manifold(3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = m.random_point(&mut rng);
        x.a[0] = 1.0;
        for mode in [RetractionMode::QrNormalize, RetractionMode::Exponential] {
            assert_eq!(m.retract(&x, &Tangent::zeros(3, 1), mode).unwrap(), x);
        }
        let mut xi = Tangent::zeros(3, 1);
        xi.a[0] = 2.0;
        let z = m.retract(&x, &xi, RetractionMode::QrNormalize).unwrap();
        assert!((z.a[0] - 2f64.exp()).abs() < 1e-14);

        x.s.row_mut(0).copy_from(&nalgebra::RowDVector::from_vec(vec![1.0, 0.0, 0.0]));
        let mut xi = Tangent::zeros(3, 1);
        xi.s[(0, 1)] = std::f64::consts::FRAC_PI_2;
        let z = m.retract(&x, &xi, RetractionMode::Exponential).unwrap();
        assert!((z.s.row(0) - nalgebra::RowDVector::from_vec(vec![0.0, 1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn degenerate_row_is_an_error() {
        let m = manifold(2, 2, 0);
        let x = Point {
            s: Matrix::identity(2, 2),
            q: Matrix::identity(2, 2),
            v: Matrix::zeros(2, 2),
            a: DVector::zeros(0),
            b: DVector::zeros(0),
        };
        let mut xi = Tangent::zeros(2, 0);
        xi.s[(0, 0)] = -1.0;
        assert!(matches!(m.retract(&x, &xi, RetractionMode::QrNormalize), Err(ManifoldError::DegenerateStep(_))));
    }

    #[test]
    fn parallel_inverse_undoes_forward() {
        let m = manifold(6, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for retraction in [RetractionMode::Exponential, RetractionMode::QrNormalize] {
            let x = m.random_point(&mut rng);
            let theta = m.random_tangent(&x, &mut rng).scaled(0.3);
            let xi = m.random_tangent(&x, &mut rng);
            let fwd = m.transport(&x, &theta, &xi, retraction, TransportMode::Parallel).unwrap();
            let back = m.transport_back(&x, &theta, &fwd, retraction, TransportMode::Parallel);
            if retraction == RetractionMode::Exponential {
                assert!(back.sub(&xi).ambient_norm() < 1e-12);
            } else {
                // Only the sphere rows and positive slots are exact for the qf curve.
                assert!((&back.s - &xi.s).norm() < 1e-12);
                assert!((&back.a - &xi.a).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn geodesic_distance_examples() {
        assert!((geodesic_distance_pos(&[1.0], &[std::f64::consts::E]) - 1.0).abs() < 1e-15);
        assert_eq!(geodesic_distance_pos(&[0.3, 2.0], &[0.3, 2.0]), 0.0);
    }
}
