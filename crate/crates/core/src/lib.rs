//! Numerical verification of noncommutative Khintchine inequalities on
//! finite-dimensional traced matrix algebras.
//!
//! Operators live in [`TracedMatrix`] (an `n x n` complex matrix with the
//! trace `tau(x) = w * Tr(x)`). Generalized singular values and distribution
//! functions are exact step functions ([`StepFunction`]); norms, Orlicz
//! moments and the inequality checks are built on top of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod khintchine;
pub mod matrix;
pub mod models;
pub mod report;
pub mod sampling;
pub mod spaces;
pub mod spectral;

pub use error::{Error, Result};
pub use khintchine::{
    assemble, bg_check, lemma_dist_check, lower_ki_check, martingale_differences, moment_chain_check,
    projection_coeffs, rademacher_average, rademacher_corollary_check, square_functions, upper_ki_check, Average,
    AverageMode, BgVariant, Filtration, Functional, InnerProduct, NormSpec, RademacherTarget, SquareFunctions,
};
pub use matrix::{AlgebraContext, CMat, TracedMatrix};
pub use models::{
    gue_family, rademacher_family, rc_family, semicircular_family, FamilyDescriptor, FamilyKind, OperatorFamily,
};
pub use report::{VerificationReport, CSV_HEADER};
pub use sampling::{derive_seed, sample_coefficients, sample_projection, CoefficientDistribution};
pub use spaces::{
    delta2_constant, dilation_modulus, lp_norm, orlicz_indices, orlicz_integral, orlicz_moment, schatten_norm,
    Indices, OrliczFunction,
};
pub use spectral::{distribution, lambda, merge_direct_sum, mu, Spectrum, StepFunction};
