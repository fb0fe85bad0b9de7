//! Dense real linear-algebra kernel.
//!
//! Everything else in the crate is built on four primitives:
//!
//! * [`qf`], the orthogonal factor of the QR decomposition with a positive
//!   diagonal in `R` (Householder reflections followed by a column sign fix),
//! * [`real_schur`], a real Schur decomposition `A = Q T Qᵀ` computed by
//!   Hessenberg reduction and Francis double-shift QR sweeps,
//! * [`eigenvalues`], which reads the spectrum off the Schur blocks,
//! * [`skew_expm`], the matrix exponential of a skew-symmetric matrix via
//!   scaling and squaring with a diagonal Padé(6) approximant.
//!
//! All routines are pure functions of their inputs.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Dense real matrix, column-major storage.
pub type Matrix = DMatrix<f64>;

/// Values with `|im| <= REAL_TOL * (1 + |λ|)` are treated as real.
pub const REAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("row-major data of length {len} does not fill a {rows}x{cols} matrix")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("matrix is numerically singular (|R[{index},{index}]| = {value:e})")]
    SingularInput { index: usize, value: f64 },
    #[error("Schur iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix is not skew-symmetric (|K + Kᵀ| = {0:e})")]
    NotSkew(f64),
}

pub type Result<T> = std::result::Result<T, KernelError>;

/// Builds a matrix from row-major entries, rejecting NaN and infinities.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(KernelError::BadShape { rows, cols, len: entries.len() });
    }
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    Ok(Matrix::from_row_slice(rows, cols, entries))
}

fn ensure_square(a: &Matrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(KernelError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    Ok(a.nrows())
}

/// Orthogonal factor `Q` of `A = QR` where `R` has a strictly positive diagonal.
pub fn qf(a: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let scale = a.norm();
    let mut r = a.clone();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
    let mut diag = vec![0.0; n];

    {
        let data = r.as_mut_slice();
        for k in 0..n {
            let col = &data[k * n + k..(k + 1) * n];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let x0 = col[0];
            if norm == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                diag[k] = 0.0;
                continue;
            }
            let rkk = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = col.to_vec();
            v[0] = x0 - rkk;
            let vv: f64 = v.iter().map(|x| x * x).sum();
            let beta = 2.0 / vv;
            diag[k] = rkk;
            data[k * n + k] = rkk;
            for e in &mut data[k * n + k + 1..(k + 1) * n] {
                *e = 0.0;
            }
            for j in k + 1..n {
                let c = &mut data[j * n + k..(j + 1) * n];
                let w = beta * v.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>();
                for (ci, vi) in c.iter_mut().zip(&v) {
                    *ci -= w * vi;
                }
            }
            reflectors.push((v, beta));
        }
    }

    for (k, &d) in diag.iter().enumerate() {
        if !(d.abs() >= 1e-14 * scale) {
            return Err(KernelError::SingularInput { index: k, value: d.abs() });
        }
    }

    // Backward accumulation of H_0 H_1 ... H_{n-1}.
    let mut q = Matrix::identity(n, n);
    {
        let data = q.as_mut_slice();
        for k in (0..n).rev() {
            let (v, beta) = &reflectors[k];
            if v.is_empty() {
                continue;
            }
            for j in k..n {
                let c = &mut data[j * n + k..(j + 1) * n];
                let w = beta * v.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>();
                for (ci, vi) in c.iter_mut().zip(v) {
                    *ci -= w * vi;
                }
            }
        }
    }
    for (k, &d) in diag.iter().enumerate() {
        if d < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    Ok(q)
}

/// Real Schur decomposition `A = Q T Qᵀ`.
#[derive(Debug, Clone)]
pub struct RealSchur {
    /// Orthogonal Schur vectors.
    pub q: Matrix,
    /// Quasi-upper-triangular factor: 1x1 blocks carry real eigenvalues,
    /// 2x2 blocks carry complex-conjugate pairs.
    pub t: Matrix,
}

impl RealSchur {
    /// Start indices and sizes (1 or 2) of the diagonal blocks of `T`.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let n = self.t.nrows();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            if i + 1 < n && self.t[(i + 1, i)] != 0.0 {
                out.push((i, 2));
                i += 2;
            } else {
                out.push((i, 1));
                i += 1;
            }
        }
        out
    }
}

/// Real Schur form via orthogonal Hessenberg reduction and Francis
/// double-shift QR. Errors with [`KernelError::NoConvergence`] once the total
/// number of QR sweeps exceeds `40 n²`.
pub fn real_schur(a: &Matrix) -> Result<RealSchur> {
    let n = ensure_square(a)?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::NonFinite);
    }
    let mut h = a.clone();
    let mut v = Matrix::identity(n, n);
    if n > 1 {
        hessenberg(&mut h, &mut v);
        francis_qr(&mut h, &mut v)?;
    }
    Ok(RealSchur { q: v, t: h })
}

// Householder reduction to upper Hessenberg form, accumulating the
// transformations into `v`.
fn hessenberg(h: &mut Matrix, v: &mut Matrix) {
    let n = h.nrows();
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[(i, j)];
            }
            f /= hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[(i, j)];
            }
            f /= hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }

    for m in (1..high).rev() {
        if h[(m, m - 1)] == 0.0 {
            continue;
        }
        for i in m + 1..=high {
            ort[i] = h[(i, m - 1)];
        }
        for j in m..=high {
            let mut g = 0.0;
            for i in m..=high {
                g += ort[i] * v[(i, j)];
            }
            // Double division avoids possible underflow.
            g = (g / ort[m]) / h[(m, m - 1)];
            for i in m..=high {
                v[(i, j)] += g * ort[i];
            }
        }
    }

    for j in 0..n {
        for i in j + 2..n {
            h[(i, j)] = 0.0;
        }
    }
}

fn francis_qr(h: &mut Matrix, v: &mut Matrix) -> Result<()> {
    let nn = h.nrows();
    let low = 0usize;
    let high = nn - 1;
    let eps = f64::EPSILON;
    let cap = 40 * nn * nn;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
    let (mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let mut iter = 0usize;
    let mut total = 0usize;
    let mut n = high as isize;
    while n >= low as isize {
        let nu = n as usize;
        // Look for a single small sub-diagonal element.
        let mut l = nu;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                h[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }

        if l == nu {
            h[(nu, nu)] += exshift;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;

            if q >= 0.0 {
                // Real pair: rotate the block to upper-triangular form.
                z = if p >= 0.0 { p + z } else { p - z };
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in low..=high {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            total += 1;
            if total > cap {
                return Err(KernelError::NoConvergence(cap));
            }
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }

            // Exceptional shifts.
            if iter == 10 {
                exshift += x;
                for i in low..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;

            // Look for two consecutive small sub-diagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR step on rows l..n and columns m..n.
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in low..=high {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }

    for j in 0..nn {
        for i in j + 2..nn {
            h[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Eigenvalues of a 2x2 real block `[[a, b], [c, d]]`.
fn block_eigenvalues(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let disc = half * half + b * c;
    if disc >= 0.0 {
        let root = disc.sqrt();
        [Complex64::new(mean + root, 0.0), Complex64::new(mean - root, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [Complex64::new(mean, im), Complex64::new(mean, -im)]
    }
}

/// Eigenvalues of a real square matrix, read off its real Schur form.
///
/// Complex values come in exact conjugate pairs, positive imaginary part first.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    let schur = real_schur(a)?;
    Ok(schur_eigenvalues(&schur))
}

pub fn schur_eigenvalues(schur: &RealSchur) -> Vec<Complex64> {
    let t = &schur.t;
    let mut out = Vec::with_capacity(t.nrows());
    for (i, size) in schur.blocks() {
        if size == 1 {
            out.push(Complex64::new(t[(i, i)], 0.0));
        } else {
            out.extend(block_eigenvalues(t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]));
        }
    }
    out
}

/// Whether `z` counts as real under the pairing tolerance.
pub fn is_effectively_real(z: Complex64) -> bool {
    z.im.abs() <= REAL_TOL * (1.0 + z.norm())
}

const PADE6: [f64; 7] = [1.0, 1.0 / 2.0, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];

/// Matrix exponential by scaling and squaring with a diagonal Padé(6)
/// approximant. No structure is assumed; see [`skew_expm`] for the checked
/// entry point.
pub fn expm_pade6(x: &Matrix) -> Matrix {
    let n = x.nrows();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let norm1 = (0..n).map(|j| x.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = x * 0.5f64.powi(squarings);

    let id = Matrix::identity(n, n);
    let x2 = &scaled * &scaled;
    let x4 = &x2 * &x2;
    let x6 = &x4 * &x2;
    let even = &id * PADE6[0] + &x2 * PADE6[2] + &x4 * PADE6[4] + &x6 * PADE6[6];
    let odd = &scaled * (&id * PADE6[1] + &x2 * PADE6[3] + &x4 * PADE6[5]);
    let num = &even + &odd;
    let den = &even - &odd;
    let mut r = den.lu().solve(&num).expect("Padé denominator is nonsingular for ‖X‖ ≤ 1/2");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// `Exp(K)` for skew-symmetric `K`; the result is orthogonal with unit determinant.
pub fn skew_expm(k: &Matrix) -> Result<Matrix> {
    ensure_square(k)?;
    let asym = (k + k.transpose()).norm();
    if asym > 1e-12 * (1.0 + k.norm()) {
        return Err(KernelError::NotSkew(asym));
    }
    Ok(expm_pade6(k))
}

/// Skew-symmetric part `(A - Aᵀ)/2`.
pub fn skew_part(a: &Matrix) -> Matrix {
    (a - a.transpose()) * 0.5
}
