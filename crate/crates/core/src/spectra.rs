//! Self-conjugate spectra: the block form `D(Λ)`, the strict-upper mask of
//! the nilpotent part, the 3x3 admissibility region, the Fourier/circulant
//! construction for odd sizes, random sampling and the greedy distance
//! between eigenvalue multisets.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{self, is_effectively_real, KernelError, Matrix};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("pair representative {index} must have strictly positive imaginary part (got {im})")]
    NonPositiveImaginary { index: usize, im: f64 },
    #[error("spectrum has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: n = {n} but s + 2t = {s} + 2*{t}")]
    DimensionMismatch { n: usize, s: usize, t: usize },
    #[error("circulant construction needs an odd dimension (n = {0})")]
    EvenDimension(usize),
    #[error("circulant construction needs a leading eigenvalue 1")]
    MissingPerronRoot,
    #[error("real eigenvalues besides the leading 1 must pair up for a real circulant")]
    UnpairedReals,
    #[error("eigenvalue lists have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("bad sampling arguments: {0}")]
    BadArguments(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("spectrum file: {0}")]
    Io(#[from] std::io::Error),
    #[error("spectrum file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SpectrumError>;

/// A self-conjugate spectrum with `s` real values and `t` conjugate pairs.
///
/// Each pair is stored once, by its representative with positive imaginary
/// part; the full list is `reals..., λ₁, conj λ₁, ..., λ_t, conj λ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    reals: Vec<f64>,
    pairs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(reals: Vec<f64>, pairs: Vec<Complex64>) -> Result<Self> {
        if reals.iter().any(|r| !r.is_finite()) || pairs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SpectrumError::NonFinite);
        }
        if let Some((index, z)) = pairs.iter().enumerate().find(|(_, z)| !(z.im > 0.0)) {
            return Err(SpectrumError::NonPositiveImaginary { index, im: z.im });
        }
        Ok(Self { reals, pairs })
    }

    pub fn real_only(reals: Vec<f64>) -> Result<Self> {
        Self::new(reals, Vec::new())
    }

    pub fn reals(&self) -> &[f64] {
        &self.reals
    }

    pub fn pairs(&self) -> &[Complex64] {
        &self.pairs
    }

    /// Number of real eigenvalues.
    pub fn s(&self) -> usize {
        self.reals.len()
    }

    /// Number of conjugate pairs.
    pub fn t(&self) -> usize {
        self.pairs.len()
    }

    pub fn n(&self) -> usize {
        self.s() + 2 * self.t()
    }

    /// All `n` eigenvalues, conjugates listed right after their representative.
    pub fn full(&self) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = self.reals.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        for z in &self.pairs {
            out.push(*z);
            out.push(z.conj());
        }
        out
    }

    /// Puts the spectrum into canonical order: reals descending, pairs by
    /// descending real part then descending imaginary part.
    pub fn canonical(mut self) -> Self {
        self.reals.sort_by(|a, b| b.total_cmp(a));
        self.pairs.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        self
    }

    pub fn to_file(&self) -> SpectrumFile {
        SpectrumFile { real: self.reals.clone(), pairs: self.pairs.iter().map(|z| [z.re, z.im]).collect() }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpectrumFile = serde_json::from_str(text)?;
        file.into_spectrum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("spectrum serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// On-disk form: `{"real": [...], "pairs": [[re, im], ...]}` with `im > 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub real: Vec<f64>,
    #[serde(default)]
    pub pairs: Vec<[f64; 2]>,
}

impl SpectrumFile {
    pub fn into_spectrum(self) -> Result<Spectrum> {
        Spectrum::new(self.real, self.pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// `blockdiag(λ₁, ..., λ_s, [[Re λ, Im λ], [-Im λ, Re λ]] per pair)`.
pub fn build_d(spectrum: &Spectrum) -> Matrix {
    let n = spectrum.n();
    let s = spectrum.s();
    let mut d = Matrix::zeros(n, n);
    for (i, &r) in spectrum.reals().iter().enumerate() {
        d[(i, i)] = r;
    }
    for (j, z) in spectrum.pairs().iter().enumerate() {
        let p = s + 2 * j;
        d[(p, p)] = z.re;
        d[(p, p + 1)] = z.im;
        d[(p + 1, p)] = -z.im;
        d[(p + 1, p + 1)] = z.re;
    }
    d
}

/// 0/1 pattern of the strictly upper-triangular space with the entry just
/// above each conjugate-pair block removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    s: usize,
    t: usize,
    weights: Matrix,
}

impl Mask {
    pub fn new(n: usize, s: usize, t: usize) -> Result<Self> {
        if n != s + 2 * t {
            return Err(SpectrumError::DimensionMismatch { n, s, t });
        }
        let mut weights = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..j {
                weights[(i, j)] = 1.0;
            }
        }
        for k in 0..t {
            weights[(s + 2 * k, s + 2 * k + 1)] = 0.0;
        }
        Ok(Self { s, t, weights })
    }

    pub fn for_spectrum(spectrum: &Spectrum) -> Self {
        Self::new(spectrum.n(), spectrum.s(), spectrum.t()).expect("spectrum dimensions are consistent")
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.weights[(i, j)] != 0.0
    }

    /// Orthogonal projection `W ∘ X`.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        x.component_mul(&self.weights)
    }

    pub fn apply_mut(&self, x: &mut Matrix) {
        x.component_mul_assign(&self.weights);
    }

    /// Whether `x` vanishes (exactly) outside the mask.
    pub fn contains(&self, x: &Matrix) -> bool {
        x.iter().zip(self.weights.iter()).all(|(v, w)| *w != 0.0 || *v == 0.0)
    }
}

/// Membership in `Θ₃ ∪ [-1, 1]`, the eigenvalue region of 3x3 stochastic matrices.
pub fn theta3_contains(z: Complex64) -> bool {
    if z.im == 0.0 {
        return (-1.0..=1.0).contains(&z.re);
    }
    (-0.5..=1.0).contains(&z.re) && (z.re - 1.0).powi(2) >= 3.0 * z.im * z.im
}

/// The n-th shift matrix: ones on the subdiagonal and in the top-right corner.
pub fn shift_matrix(n: usize) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    if n == 0 {
        return p;
    }
    for i in 1..n {
        p[(i, i - 1)] = 1.0;
    }
    p[(0, n - 1)] += 1.0;
    p
}

/// `F_n v` with `F_n = (e^{-2πi jk/n})`, by direct summation.
pub fn fourier_apply(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|j| {
            v.iter()
                .enumerate()
                .map(|(k, x)| x * Complex64::from_polar(1.0, -2.0 * PI * ((j * k) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

/// `F_n⁻¹ v = (1/n) conj(F_n) v`.
pub fn inverse_fourier_apply(v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|j| {
            v.iter()
                .enumerate()
                .map(|(k, x)| x * Complex64::from_polar(1.0, 2.0 * PI * ((j * k) % n) as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        })
        .collect()
}

/// Output of [`circulant_from_spectrum`].
#[derive(Debug, Clone)]
pub struct Circulant {
    /// Real circulant with first row `F_n⁻¹ Λ`.
    pub matrix: Matrix,
    /// `F_n⁻¹ Λ` before the cast to real.
    pub first_row: Vec<Complex64>,
    /// Whether every entry is `>= -1e-12`.
    pub nonnegative: bool,
}

/// Real circulant matrix with prescribed odd-size spectrum and unit row sums.
///
/// The spectrum is arranged as `(1, λ₁..λ_m, conj λ_m..conj λ₁)` before the
/// inverse Fourier transform; real values other than the leading one are
/// consumed in equal pairs.
pub fn circulant_from_spectrum(spectrum: &Spectrum) -> Result<Circulant> {
    let n = spectrum.n();
    if n.is_multiple_of(2) {
        return Err(SpectrumError::EvenDimension(n));
    }
    let mut reals = spectrum.reals().to_vec();
    let lead = reals.iter().position(|r| (r - 1.0).abs() <= 1e-12).ok_or(SpectrumError::MissingPerronRoot)?;
    reals.remove(lead);
    reals.sort_by(|a, b| b.total_cmp(a));
    let mut half: Vec<Complex64> = Vec::with_capacity((n - 1) / 2);
    for chunk in reals.chunks(2) {
        if chunk.len() != 2 || (chunk[0] - chunk[1]).abs() > 1e-12 {
            return Err(SpectrumError::UnpairedReals);
        }
        half.push(Complex64::new(chunk[0], 0.0));
    }
    half.extend_from_slice(spectrum.pairs());

    let mut ordered = Vec::with_capacity(n);
    ordered.push(Complex64::new(1.0, 0.0));
    ordered.extend(half.iter().copied());
    ordered.extend(half.iter().rev().map(|z| z.conj()));

    let first_row = inverse_fourier_apply(&ordered);
    let mut matrix = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] = first_row[(j + n - i) % n].re;
        }
    }
    let nonnegative = matrix.iter().all(|&v| v >= -1e-12);
    Ok(Circulant { matrix, first_row, nonnegative })
}

/// Row-normalized matrix of uniform(0, 1) entries.
pub fn sample_stochastic<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        loop {
            let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let sum: f64 = row.iter().sum();
            if sum < 1e-12 {
                continue;
            }
            for (j, v) in row.into_iter().enumerate() {
                a[(i, j)] = v / sum;
            }
            break;
        }
    }
    a
}

/// Splits the eigenvalues of `a` into a canonical [`Spectrum`].
pub fn spectrum_of_matrix(a: &Matrix) -> Result<Spectrum> {
    let eig = kernel::eigenvalues(a)?;
    Ok(spectrum_from_eigenvalues(&eig))
}

/// Classifies a self-conjugate list into reals and pair representatives.
///
/// Near-real values (pairing tolerance) are taken as real. Non-real values
/// are matched greedily with their nearest conjugate partner.
pub fn spectrum_from_eigenvalues(eig: &[Complex64]) -> Spectrum {
    let mut reals = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for &z in eig {
        if is_effectively_real(z) {
            reals.push(z.re);
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower.push(z);
        }
    }
    let mut pairs = Vec::with_capacity(upper.len());
    let mut used = vec![false; lower.len()];
    for z in upper {
        let partner = lower
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .min_by(|(_, a), (_, b)| (*a - z.conj()).norm().total_cmp(&(*b - z.conj()).norm()))
            .map(|(i, w)| (i, *w));
        match partner {
            Some((i, w)) => {
                used[i] = true;
                pairs.push(Complex64::new(0.5 * (z.re + w.re), 0.5 * (z.im - w.im)));
            }
            None => {
                // Unmatched non-real value; keep the list length by splitting into reals.
                reals.push(z.re);
            }
        }
    }
    for (i, w) in lower.into_iter().enumerate() {
        if !used[i] {
            reals.push(w.re);
        }
    }
    Spectrum { reals, pairs }.canonical()
}

/// Greedy matching distance between two eigenvalue multisets: repeatedly
/// remove the globally closest cross pair and report the largest removed gap.
pub fn greedy_distance(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(SpectrumError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    let mut cross: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            cross.push(((x - y).norm(), i, j));
        }
    }
    cross.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut used_a = vec![false; n];
    let mut used_b = vec![false; n];
    let mut removed = 0;
    let mut worst = 0.0f64;
    for (dist, i, j) in cross {
        if removed == n {
            break;
        }
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        removed += 1;
        worst = worst.max(dist);
    }
    Ok(worst)
}

/// Spectrum `(1, reals, pairs)` with every non-leading value in the closed
/// disk of radius `1/(2n)`; such spectra are always realizable by a
/// stochastic matrix.
pub fn sample_disk_spectrum<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> Result<Spectrum> {
    if n < 3 {
        return Err(SpectrumError::BadArguments(format!("n must be at least 3 (got {n})")));
    }
    if t < 1 || 2 * t >= n {
        return Err(SpectrumError::BadArguments(format!(
            "t must satisfy 1 <= t and 2t < n so that the leading 1 fits (n = {n}, t = {t})"
        )));
    }
    let radius = 1.0 / (2.0 * n as f64);
    let s = n - 2 * t;
    let mut reals = Vec::with_capacity(s);
    reals.push(1.0);
    for _ in 1..s {
        reals.push(rng.random_range(-radius..=radius));
    }
    let mut pairs = Vec::with_capacity(t);
    while pairs.len() < t {
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        if y == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let scale = radius * u.sqrt() / x.hypot(y);
        if !(scale * y.abs() > 0.0) {
            continue;
        }
        pairs.push(Complex64::new(x * scale, y.abs() * scale));
    }
    Ok(Spectrum::new(reals, pairs)?.canonical())
}
