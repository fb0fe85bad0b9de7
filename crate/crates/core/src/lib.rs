//! Recovering row-stochastic matrices from a prescribed self-conjugate
//! spectrum by Riemannian conjugate-gradient descent.
//!
//! The search space is `OB(n) × O(n) × V_t × ℝ₊ᵗ × ℝᵗ`. A point
//! `(S, Q, V, a, b)` encodes the candidate `S ∘ S` and the isospectral family
//! `Q T_ab (D(Λ) + V) T_ab⁻¹ Qᵀ`; the objective is half the squared Frobenius
//! distance between the two.

// `!(x > 0.0)` style tests deliberately treat NaN as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod kernel;
pub mod manifold;
pub mod model;
pub mod solver;
pub mod spectra;
