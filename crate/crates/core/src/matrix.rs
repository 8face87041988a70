//! Dense complex matrices bound to a tracial context.
//!
//! A [`TracedMatrix`] is the finite stand-in for a measurable operator: an
//! `n x n` complex matrix together with the trace `tau(x) = w * sum_k x_kk`.
//! Everything that depends on `|x| = (x*x)^{1/2}` is computed from the
//! singular value decomposition of `x` itself, so spectral data of `|x|` is
//! accurate down to `eps * |x|` rather than `sqrt(eps) * |x|`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense complex matrix storage.
pub type CMat = DMatrix<Complex64>;

/// Default cap on the dimension of any matrix built by tensor products.
pub const DEFAULT_DIM_CAP: usize = 4096;

static DIM_CAP: AtomicUsize = AtomicUsize::new(DEFAULT_DIM_CAP);

/// Current cap on constructed matrix dimensions.
pub fn dim_cap() -> usize {
    DIM_CAP.load(Ordering::Relaxed)
}

/// Overrides the dimension cap for the whole process.
pub fn set_dim_cap(cap: usize) {
    DIM_CAP.store(cap.max(1), Ordering::Relaxed);
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    let cap = dim_cap();
    if dim > cap {
        return Err(Error::DimensionOverflow { dim, cap });
    }
    Ok(())
}

/// Relative tolerance for treating a matrix as Hermitian.
pub const HERMITIAN_RTOL: f64 = 1e-9;

/// Relative tolerance for strict comparisons `s > t` against singular values.
pub const SPECTRAL_RTOL: f64 = 1e-9;

/// Absolute spectral tolerance for a matrix of operator norm `norm`.
pub fn spectral_tol(norm: f64) -> f64 {
    SPECTRAL_RTOL * norm.max(1.0)
}

/// Matrix size and trace weight of a finite tracial algebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgebraContext {
    dim: usize,
    trace_weight: f64,
}

impl AlgebraContext {
    pub fn new(dim: usize, trace_weight: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidContext("dimension must be at least 1".into()));
        }
        if !(trace_weight > 0.0 && trace_weight.is_finite()) {
            return Err(Error::InvalidContext(format!(
                "trace weight must be positive and finite, got {trace_weight}"
            )));
        }
        Ok(Self { dim, trace_weight })
    }

    /// `M_n` with the normalized trace `tr / n`.
    pub fn normalized(dim: usize) -> Result<Self> {
        Self::new(dim, 1.0 / dim.max(1) as f64)
    }

    /// `M_n` with the standard trace.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(dim, 1.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn trace_weight(&self) -> f64 {
        self.trace_weight
    }

    /// `tau(1) = w * n`.
    pub fn total_mass(&self) -> f64 {
        self.trace_weight * self.dim as f64
    }

    /// Context of the tensor product: dimensions and weights multiply.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let dim = self
            .dim
            .checked_mul(other.dim)
            .ok_or(Error::DimensionOverflow { dim: usize::MAX, cap: dim_cap() })?;
        check_dim(dim)?;
        Self::new(dim, self.trace_weight * other.trace_weight)
    }

    fn same_as(&self, other: &Self) -> bool {
        self.dim == other.dim && self.trace_weight == other.trace_weight
    }
}

/// A square complex matrix together with its algebra context.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedMatrix {
    ctx: AlgebraContext,
    entries: CMat,
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct HermEig {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub basis: CMat,
}

impl HermEig {
    /// `basis * diag(values) * basis^*`.
    pub fn reconstruct(&self) -> CMat {
        let scaled = scale_columns(&self.basis, self.values.iter().copied());
        &scaled * self.basis.adjoint()
    }
}

/// Singular values (descending) with a complete set of right singular vectors.
#[derive(Debug, Clone)]
pub struct AbsDecomposition {
    pub singular_values: Vec<f64>,
    /// Columns are right singular vectors, i.e. eigenvectors of `|x|`.
    pub basis: CMat,
}

impl AbsDecomposition {
    /// Builds `f(|x|)` from the decomposition.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMat {
        let scaled = scale_columns(&self.basis, self.singular_values.iter().map(|&s| f(s)));
        &scaled * self.basis.adjoint()
    }

    /// Orthonormal bases of the ranges of `E_(t,inf)(|x|)` and `E_[0,t](|x|)`.
    pub fn split_at(&self, t: f64) -> (CMat, CMat) {
        let norm = self.singular_values.first().copied().unwrap_or(0.0);
        let level = t + spectral_tol(norm);
        let above: Vec<usize> = (0..self.singular_values.len())
            .filter(|&k| self.singular_values[k] > level)
            .collect();
        let below: Vec<usize> = (0..self.singular_values.len())
            .filter(|&k| self.singular_values[k] <= level)
            .collect();
        (self.basis.select_columns(&above), self.basis.select_columns(&below))
    }
}

fn scale_columns(basis: &CMat, factors: impl Iterator<Item = f64>) -> CMat {
    let mut out = basis.clone();
    for (mut col, f) in out.column_iter_mut().zip(factors) {
        col *= Complex64::new(f, 0.0);
    }
    out
}

fn svd_iteration_budget(n: usize) -> usize {
    1000 * n.max(8)
}

/// Descending singular values of an arbitrary (possibly rectangular) matrix.
pub fn singular_values_of(m: &CMat) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let budget = svd_iteration_budget(m.nrows().max(m.ncols()));
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, budget)
        .ok_or(Error::ConvergenceFailure("singular value decomposition"))?;
    let mut values: Vec<f64> = svd.singular_values.iter().map(|s| s.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Decomposition of `|m| = (m^* m)^{1/2}` for an `r x c` matrix, `c x c` result.
pub fn abs_decomposition_of(m: &CMat) -> Result<AbsDecomposition> {
    let (rows, cols) = m.shape();
    let padded;
    let source = if rows < cols {
        padded = m.clone().resize(cols, cols, Complex64::new(0.0, 0.0));
        &padded
    } else {
        m
    };
    let budget = svd_iteration_budget(rows.max(cols));
    let svd = SVD::try_new(source.clone(), false, true, f64::EPSILON, budget)
        .ok_or(Error::ConvergenceFailure("singular value decomposition"))?;
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = order.iter().map(|&k| svd.singular_values[k].max(0.0)).collect();
    let basis = v_t.adjoint().select_columns(&order);
    Ok(AbsDecomposition { singular_values, basis })
}

impl TracedMatrix {
    pub fn new(ctx: AlgebraContext, entries: CMat) -> Result<Self> {
        if entries.nrows() != ctx.dim || entries.ncols() != ctx.dim {
            return Err(Error::ContextMismatch(format!(
                "{}x{} entries for a context of dimension {}",
                entries.nrows(),
                entries.ncols(),
                ctx.dim
            )));
        }
        Ok(Self { ctx, entries })
    }

    pub fn zeros(ctx: AlgebraContext) -> Self {
        Self { ctx, entries: CMat::zeros(ctx.dim, ctx.dim) }
    }

    pub fn identity(ctx: AlgebraContext) -> Self {
        Self { ctx, entries: CMat::identity(ctx.dim, ctx.dim) }
    }

    /// Diagonal matrix; the context dimension is taken from `diag.len()`.
    pub fn from_diag(trace_weight: f64, diag: &[Complex64]) -> Result<Self> {
        let ctx = AlgebraContext::new(diag.len(), trace_weight)?;
        let entries = CMat::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
        Ok(Self { ctx, entries })
    }

    pub fn from_real_diag(trace_weight: f64, diag: &[f64]) -> Result<Self> {
        let diag: Vec<Complex64> = diag.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_diag(trace_weight, &diag)
    }

    /// Matrix unit `e_{ij}` (0-based indices).
    pub fn matrix_unit(ctx: AlgebraContext, i: usize, j: usize) -> Result<Self> {
        if i >= ctx.dim || j >= ctx.dim {
            return Err(Error::IndexOutOfRange { index: i.max(j) + 1, len: ctx.dim });
        }
        let mut m = Self::zeros(ctx);
        m.entries[(i, j)] = Complex64::new(1.0, 0.0);
        Ok(m)
    }

    pub fn ctx(&self) -> &AlgebraContext {
        &self.ctx
    }

    pub fn dim(&self) -> usize {
        self.ctx.dim
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn into_entries(self) -> CMat {
        self.entries
    }

    /// Same entries, different trace weight.
    pub fn with_weight(&self, trace_weight: f64) -> Result<Self> {
        Ok(Self { ctx: AlgebraContext::new(self.ctx.dim, trace_weight)?, entries: self.entries.clone() })
    }

    pub fn adjoint(&self) -> Self {
        Self { ctx: self.ctx, entries: self.entries.adjoint() }
    }

    fn require_same_ctx(&self, other: &Self) -> Result<()> {
        if self.ctx.same_as(&other.ctx) {
            Ok(())
        } else {
            Err(Error::ContextMismatch(format!("{:?} vs {:?}", self.ctx, other.ctx)))
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.require_same_ctx(other)?;
        Ok(Self { ctx: self.ctx, entries: &self.entries * &other.entries })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_ctx(other)?;
        Ok(Self { ctx: self.ctx, entries: &self.entries + &other.entries })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.require_same_ctx(other)?;
        Ok(Self { ctx: self.ctx, entries: &self.entries - &other.entries })
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { ctx: self.ctx, entries: &self.entries * c }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    /// `tau(x) = w * sum_k x_kk`.
    pub fn trace(&self) -> Complex64 {
        self.entries.trace() * self.ctx.trace_weight
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `|h - h^*|_max`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn hermitian_tolerance(&self) -> f64 {
        HERMITIAN_RTOL * self.max_abs().max(1.0)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_defect() <= self.hermitian_tolerance()
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        singular_values_of(&self.entries)
    }

    /// Operator norm (largest singular value).
    pub fn norm_inf(&self) -> Result<f64> {
        Ok(self.singular_values()?.first().copied().unwrap_or(0.0))
    }

    /// Eigendecomposition of a Hermitian matrix.
    pub fn herm_eig(&self) -> Result<HermEig> {
        let tolerance = self.hermitian_tolerance();
        let deviation = self.hermiticity_defect();
        if deviation > tolerance {
            return Err(Error::NotHermitian { deviation, tolerance });
        }
        let sym = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = sym
            .try_symmetric_eigen(f64::EPSILON, svd_iteration_budget(self.dim()))
            .ok_or(Error::ConvergenceFailure("Hermitian eigensolver"))?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        Ok(HermEig {
            values: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
            basis: eig.eigenvectors.select_columns(&order),
        })
    }

    pub fn abs_decomposition(&self) -> Result<AbsDecomposition> {
        abs_decomposition_of(&self.entries)
    }

    /// `f(|x|)` by functional calculus.
    pub fn funcalc_abs(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let dec = self.abs_decomposition()?;
        Ok(Self { ctx: self.ctx, entries: dec.apply(f) })
    }

    /// `|x|`.
    pub fn abs(&self) -> Result<Self> {
        self.funcalc_abs(|s| s)
    }

    /// The spectral projection `E_(t,inf)(|x|)`.
    ///
    /// A singular value `s` belongs to the range iff `s > t + spectral_tol(|x|)`,
    /// so `tau` of the result equals [`crate::spectral::lambda_at`].
    pub fn spectral_projection(&self, t: f64) -> Result<Self> {
        let (above, _) = self.abs_decomposition()?.split_at(t);
        Ok(Self { ctx: self.ctx, entries: &above * above.adjoint() })
    }

    /// `self (x) other`, with weights multiplied.
    pub fn kron(&self, other: &Self) -> Result<Self> {
        let ctx = self.ctx.tensor(&other.ctx)?;
        Ok(Self { ctx, entries: self.entries.kronecker(&other.entries) })
    }

    /// Block-diagonal `self (+) other` under the trace `tau (+) tau`.
    pub fn direct_sum(&self, other: &Self) -> Result<Self> {
        if self.ctx.trace_weight != other.ctx.trace_weight {
            return Err(Error::WeightMismatch {
                left: self.ctx.trace_weight,
                right: other.ctx.trace_weight,
            });
        }
        let (a, b) = (self.dim(), other.dim());
        check_dim(a + b)?;
        let mut entries = CMat::zeros(a + b, a + b);
        entries.view_mut((0, 0), (a, a)).copy_from(&self.entries);
        entries.view_mut((a, a), (b, b)).copy_from(&other.entries);
        Ok(Self { ctx: AlgebraContext::new(a + b, self.ctx.trace_weight)?, entries })
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}
