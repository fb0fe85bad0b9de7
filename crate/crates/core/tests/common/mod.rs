#![allow(dead_code)]

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use stiep::kernel::Matrix;
use stiep::manifold::Point;
use stiep::spectra::Spectrum;

/// The pair `(-1 + √23 i) / 12`.
pub fn example_pair() -> Complex64 {
    Complex64::new(-1.0 / 12.0, 23f64.sqrt() / 12.0)
}

/// `{1, (-1 ± √23 i) / 12}`.
pub fn example_spectrum() -> Spectrum {
    Spectrum::new(vec![1.0], vec![example_pair()]).unwrap()
}

/// Stochastic 3x3 matrix with spectrum [`example_spectrum`] that has no
/// isospectral decomposition with a block-diagonal `D`.
pub fn counterexample_matrix() -> Matrix {
    Matrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 1.0, 0.0, 0.0])
}

/// Five-digit decomposition of [`counterexample_matrix`] with `a = 0.81636`, `b = 0`.
/// The (3,3) entry of `Q` carries a minus sign; without it `Q` is not orthogonal.
pub fn rounded_decomposition() -> Point {
    let q = Matrix::from_row_slice(
        3,
        3,
        &[0.57735, 0.78868, 0.21132, 0.57735, -0.57735, 0.57735, 0.57735, -0.21132, -0.78868],
    );
    let v = Matrix::from_row_slice(3, 3, &[0.0, 0.42152, 0.42834, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    Point {
        s: counterexample_matrix().map(f64::sqrt),
        q,
        v,
        a: DVector::from_element(1, 0.81636),
        b: DVector::zeros(1),
    }
}

/// Random self-conjugate spectrum with `s >= 1` reals (the first equal to 1)
/// and `t` pairs inside the unit disk.
pub fn random_spectrum<R: Rng + ?Sized>(s: usize, t: usize, rng: &mut R) -> Spectrum {
    let mut reals = vec![1.0];
    reals.extend((1..s).map(|_| rng.random_range(-0.9..0.9)));
    let pairs = (0..t).map(|_| Complex64::new(rng.random_range(-0.6..0.6), rng.random_range(0.05..0.6))).collect();
    Spectrum::new(reals, pairs).unwrap()
}

/// Characteristic polynomial coefficients `c_0 = 1, c_1, ..., c_n` of
/// `det(zI − A) = Σ c_k z^{n−k}` (Faddeev–LeVerrier).
pub fn char_poly(a: &Matrix) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    for k in 1..=n {
        m = a * &m + Matrix::identity(n, n) * coeffs[k - 1];
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// Roots of a monic polynomial (coefficients highest degree first) by the
/// Durand–Kerner iteration followed by Newton polishing.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let eval = |z: Complex64| coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c);
    let deriv = |z: Complex64| {
        coeffs[..n].iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (i, &c)| acc * z + c * (n - i) as f64)
    };
    let scale = 1.0 + coeffs.iter().skip(1).map(|c| c.abs()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..n).map(|k| seed.powu(k as u32) * scale).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    for r in &mut roots {
        for _ in 0..3 {
            let d = deriv(*r);
            if d.norm() > 0.0 {
                *r -= eval(*r) / d;
            }
        }
    }
    roots
}
