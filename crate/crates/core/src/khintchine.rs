//! Verification of upper and lower Khintchine inequalities for
//! `y = sum_i c_i (x) x_i` against the row and column square functions
//! `(sum x_i x_i^*)^{1/2}` and `(sum x_i^* x_i)^{1/2}`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{abs_decomposition_of, singular_values_of, spectral_tol, AbsDecomposition, AlgebraContext, CMat, TracedMatrix};
use crate::models::{rademacher_sign, OperatorFamily, RADEMACHER_CAP};
use crate::report::{ratio_of, VerificationReport};
use crate::spaces::{dilation_modulus, lp_norm, orlicz_integral, OrliczFunction};
use crate::spectral::{merge_direct_sum, refine_grid, Spectrum, StepFunction};

/// Row and column square functions of a sequence `x_1, ..., x_d`.
#[derive(Debug, Clone)]
pub struct SquareFunctions {
    /// `(sum x_i x_i^*)^{1/2}`
    pub row: TracedMatrix,
    /// `(sum x_i^* x_i)^{1/2}`
    pub col: TracedMatrix,
    row_dec: AbsDecomposition,
    col_dec: AbsDecomposition,
}

impl SquareFunctions {
    pub fn row_spectrum(&self) -> Spectrum {
        Spectrum::from_singular_values(self.row_dec.singular_values.clone(), self.row.ctx().trace_weight())
    }

    pub fn col_spectrum(&self) -> Spectrum {
        Spectrum::from_singular_values(self.col_dec.singular_values.clone(), self.col.ctx().trace_weight())
    }

    /// Rearrangement of `row (+) col`.
    pub fn merged_mu(&self) -> StepFunction {
        merge_direct_sum(&self.row_spectrum().mu(), &self.col_spectrum().mu())
    }
}

fn common_ctx(xs: &[TracedMatrix]) -> Result<AlgebraContext> {
    let first = xs
        .first()
        .ok_or_else(|| Error::ContextMismatch("coefficient sequence is empty".into()))?;
    if let Some(other) = xs.iter().find(|x| x.ctx() != first.ctx()) {
        return Err(Error::ContextMismatch(format!("{:?} vs {:?}", first.ctx(), other.ctx())));
    }
    Ok(*first.ctx())
}

fn stack(blocks: impl Iterator<Item = CMat>, n: usize, count: usize) -> CMat {
    let mut out = CMat::zeros(n * count, n);
    for (k, b) in blocks.enumerate() {
        out.view_mut((k * n, 0), (n, n)).copy_from(&b);
    }
    out
}

/// Both square functions. Each is `|S|` for a stacked `nd x n` matrix `S`,
/// so its spectrum comes from one SVD without squaring.
pub fn square_functions(xs: &[TracedMatrix]) -> Result<SquareFunctions> {
    let ctx = common_ctx(xs)?;
    let n = ctx.dim();
    let col_stack = stack(xs.iter().map(|x| x.entries().clone()), n, xs.len());
    let row_stack = stack(xs.iter().map(|x| x.entries().adjoint()), n, xs.len());
    let col_dec = abs_decomposition_of(&col_stack)?;
    let row_dec = abs_decomposition_of(&row_stack)?;
    Ok(SquareFunctions {
        row: TracedMatrix::new(ctx, row_dec.apply(|s| s))?,
        col: TracedMatrix::new(ctx, col_dec.apply(|s| s))?,
        row_dec,
        col_dec,
    })
}

/// `y = sum_i c_i (x) x_i` in the tensor-product context.
pub fn assemble(fam: &OperatorFamily, xs: &[TracedMatrix]) -> Result<TracedMatrix> {
    let ctx = common_ctx(xs)?;
    if xs.len() > fam.len() {
        return Err(Error::IndexOutOfRange { index: xs.len(), len: fam.len() });
    }
    let product = fam.ctx().tensor(&ctx)?;
    let mut y = TracedMatrix::zeros(product);
    for (c, x) in fam.members().iter().zip(xs) {
        y = y.add(&c.kron(x)?)?;
    }
    Ok(y)
}

/// `(1 (x) L^*) y (1 (x) R)` for `y` acting on `C^D (x) C^n`.
fn compress(y: &CMat, n: usize, left: &CMat, right: &CMat) -> CMat {
    let outer = y.nrows() / n;
    let (a, b) = (left.ncols(), right.ncols());
    let left_adj = left.adjoint();
    let mut out = CMat::zeros(outer * a, outer * b);
    if a == 0 || b == 0 {
        return out;
    }
    for i in 0..outer {
        for j in 0..outer {
            let block = y.view((i * n, j * n), (n, n));
            if block.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                continue;
            }
            let reduced = &left_adj * block * right;
            out.view_mut((i * a, j * b), (a, b)).copy_from(&reduced);
        }
    }
    out
}

fn certified_constant(fam: &OperatorFamily) -> Result<f64> {
    fam.linfty_constant().ok_or(Error::MissingCertificate)
}

fn dims_label(fam: &OperatorFamily, xs: &[TracedMatrix]) -> String {
    format!("D={},n={},d={}", fam.ctx().dim(), xs.first().map_or(0, |x| x.dim()), xs.len())
}

fn base_report(experiment: &str, fam: &OperatorFamily, xs: &[TracedMatrix], tol: f64) -> VerificationReport {
    VerificationReport::new(experiment, tol).with_family(fam.descriptor()).with_dims(dims_label(fam, xs))
}

/// Symmetric functional used on both sides of an upper inequality.
#[derive(Debug, Clone, PartialEq)]
pub enum NormSpec {
    /// Schatten / noncommutative `L_p`, `p` in `[1, inf]`.
    Lp(f64),
    /// The moment `tau(Phi(|.|))`; compared as `tau Phi(|y|) <= tau Phi(C (row + col))`.
    Orlicz(OrliczFunction),
    /// Pointwise `mu_t(y) <= C mu_t(row + col)`, which bounds every symmetric norm.
    Rearrangement,
}

/// Upper Khintchine inequality `|y|_E <= C |row (+) col|_E` with the
/// family's certified constant `C`.
///
/// Details record `rhs_sum = |row|_E + |col|_E` and, for `L_p`,
/// `rhs_max = max(|row|_E, |col|_E)`.
pub fn upper_ki_check(
    fam: &OperatorFamily,
    xs: &[TracedMatrix],
    norm: &NormSpec,
    tol: f64,
) -> Result<VerificationReport> {
    let c = certified_constant(fam)?;
    let y = assemble(fam, xs)?;
    let mu_y = Spectrum::of(&y)?.mu();
    let sf = square_functions(xs)?;
    let (mu_row, mu_col) = (sf.row_spectrum().mu(), sf.col_spectrum().mu());
    let merged = merge_direct_sum(&mu_row, &mu_col);
    let report = base_report("upper-ki", fam, xs, tol);

    match norm {
        NormSpec::Lp(p) => {
            let lhs = lp_norm(&mu_y, *p)?;
            let rhs = lp_norm(&merged, *p)?;
            let (r, k) = (lp_norm(&mu_row, *p)?, lp_norm(&mu_col, *p)?);
            let mut report = report.bounded(lhs, rhs, c);
            report.detail("p", *p);
            report.detail("rhs_sum", r + k);
            report.detail("rhs_max", r.max(k));
            report.detail("merge_le_sum", f64::from(u8::from(rhs <= (r + k) * (1.0 + tol))));
            Ok(report)
        }
        NormSpec::Orlicz(phi) => {
            let lhs = orlicz_integral(&mu_y, phi);
            let rhs = orlicz_integral(&merged.scaled(c), phi);
            let mut report = report.bounded(lhs, rhs, 1.0);
            report.detail("constant", c);
            report.detail(
                "rhs_sum",
                orlicz_integral(&mu_row.scaled(c), phi) + orlicz_integral(&mu_col.scaled(c), phi),
            );
            report.note(format!("{phi}: rhs = tau(Phi(C (row + col)))"));
            Ok(report)
        }
        NormSpec::Rearrangement => {
            let scaled = merged.scaled(c);
            let mut points: Vec<f64> = mu_y.breakpoints();
            points.extend(scaled.breakpoints());
            let abs_tol = spectral_tol(mu_y.sup());
            let mut report = report;
            report.bound = Some(1.0);
            let mut worst = (0.0, 0.0, 0.0);
            for t in refine_grid(points) {
                let (l, r) = (mu_y.eval(t), scaled.eval(t));
                report.checks += 1;
                if l > r * (1.0 + tol) + abs_tol {
                    report.violations += 1;
                }
                if ratio_of(l, r) > worst.0 {
                    worst = (ratio_of(l, r), l, r);
                }
            }
            report.lhs = worst.1;
            report.rhs = worst.2;
            report.ratio = ratio_of(worst.1, worst.2);
            report.pass = report.violations == 0;
            report.detail("constant", c);
            Ok(report)
        }
    }
}

/// Relative size of the largest off-diagonal Gram entry.
fn off_diagonal_mass(g: &CMat) -> f64 {
    let scale = (0..g.nrows()).map(|i| g[(i, i)].norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if i != j {
                worst = worst.max(g[(i, j)].norm());
            }
        }
    }
    worst / scale
}

/// Gram off-diagonal tolerance for treating a family as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

/// Lower Khintchine inequality `C max(|row|_p, |col|_p) <= |y|_p` for an
/// orthogonal family with `C = min_i |c_i|_2`.
///
/// Pass/fail is enforced at `p = 2` and `p = inf`; other exponents are
/// reported as ratios.
pub fn lower_ki_check(
    fam: &OperatorFamily,
    xs: &[TracedMatrix],
    p: f64,
    tol: f64,
) -> Result<VerificationReport> {
    if !(p >= 2.0) {
        return Err(Error::DomainError(format!("lower inequality needs p >= 2, got {p}")));
    }
    let used = xs.len().min(fam.len());
    let gram = fam.gram().view((0, 0), (used, used)).into_owned();
    let mass = off_diagonal_mass(&gram);
    if mass > ORTHOGONALITY_TOL {
        return Err(Error::NotOrthogonal(mass));
    }
    let c = (0..used).map(|i| gram[(i, i)].re).fold(f64::INFINITY, f64::min).max(0.0).sqrt();
    let y = assemble(fam, xs)?;
    let sf = square_functions(xs)?;
    let row = lp_norm(&sf.row_spectrum().mu(), p)?;
    let col = lp_norm(&sf.col_spectrum().mu(), p)?;
    let lhs = c * row.max(col);
    let rhs = lp_norm(&Spectrum::of(&y)?.mu(), p)?;
    let report = base_report("lower-ki", fam, xs, tol);
    let mut report = if p == 2.0 || p.is_infinite() {
        report.bounded(lhs, rhs, 1.0)
    } else {
        let mut r = report.ratio_only(lhs, rhs);
        r.note("constant not certified at intermediate p; ratio reported only");
        r
    };
    report.detail("p", p);
    report.detail("constant", c);
    Ok(report)
}

/// Distribution inequality `lambda_{Ct}(y) <= lambda_t(col) + lambda_t(row)`
/// on a level grid, with a replay of its proof.
///
/// For each level `t` the replay forms `1 - p = 1 (x) E_(t,inf)(col)` and
/// `1 - q = 1 (x) E_(t,inf)(row)` and checks `|q y p| <= C t`,
/// `lambda_{Ct}(q y p) = 0`, `lambda_0((1-q) y p) <= tau(1-q)` and
/// `lambda_0(y (1-p)) <= tau(1-p)`.
pub fn lemma_dist_check(
    fam: &OperatorFamily,
    xs: &[TracedMatrix],
    t_grid: Option<&[f64]>,
    tol: f64,
) -> Result<VerificationReport> {
    let c = certified_constant(fam)?;
    let y = assemble(fam, xs)?;
    let n = xs[0].dim();
    let outer = fam.ctx().dim();
    let spec_y = Spectrum::of(&y)?;
    let sf = square_functions(xs)?;
    let (spec_row, spec_col) = (sf.row_spectrum(), sf.col_spectrum());

    let mut points = vec![0.0];
    points.extend(spec_y.values.iter().map(|s| s / c));
    points.extend(spec_row.values.iter().copied());
    points.extend(spec_col.values.iter().copied());
    if let Some(extra) = t_grid {
        if let Some(&bad) = extra.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeLevel(bad));
        }
        points.extend_from_slice(extra);
    }
    let grid = refine_grid(points);

    let mut report = base_report("lemma-dist", fam, xs, tol);
    report.bound = Some(1.0);
    let mut worst = (0.0, 0.0, 0.0);
    // smallest level per pair of projection ranks
    let mut groups: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &t in &grid {
        let lhs = spec_y.lambda(c * t);
        let rhs = spec_col.lambda(t) + spec_row.lambda(t);
        report.checks += 1;
        if lhs > spec_col.lambda_upper(t) + spec_row.lambda_upper(t) {
            report.violations += 1;
        }
        if ratio_of(lhs, rhs) > worst.0 {
            worst = (ratio_of(lhs, rhs), lhs, rhs);
        }
        let key = (spec_col.count_above(t + spec_col.tol), spec_row.count_above(t + spec_row.tol));
        groups.entry(key).or_insert(t);
    }

    let y_tol = spec_y.tol;
    let w_y = y.ctx().trace_weight();
    let sf_tol = spec_row.tol.max(spec_col.tol);
    let identity = CMat::identity(n, n);
    let (mut worst_qyp, mut replay_violations) = (0.0f64, 0usize);
    for &t in groups.values() {
        let (p_above, p_below) = sf.col_dec.split_at(t);
        let (q_above, q_below) = sf.row_dec.split_at(t);

        let qyp = singular_values_of(&compress(y.entries(), n, &q_below, &p_below))?;
        let qyp_norm = qyp.first().copied().unwrap_or(0.0);
        let allowed = c * (t + sf_tol) + y_tol;
        worst_qyp = worst_qyp.max(qyp_norm - c * t);
        let qyp_mass = qyp.iter().filter(|&&s| s > c * t + sf_tol * c + y_tol).count();

        let middle = singular_values_of(&compress(y.entries(), n, &q_above, &p_below))?;
        let middle_rank = middle.iter().filter(|&&s| s > y_tol).count();
        let right = singular_values_of(&compress(y.entries(), n, &identity, &p_above))?;
        let right_rank = right.iter().filter(|&&s| s > y_tol).count();

        let checks = [
            qyp_norm <= allowed,
            qyp_mass == 0,
            w_y * middle_rank as f64 <= w_y * (outer * q_above.ncols()) as f64,
            w_y * right_rank as f64 <= w_y * (outer * p_above.ncols()) as f64,
        ];
        report.checks += checks.len();
        let failed = checks.iter().filter(|ok| !**ok).count();
        replay_violations += failed;
        report.violations += failed;
    }

    report.lhs = worst.1;
    report.rhs = worst.2;
    report.ratio = ratio_of(worst.1, worst.2);
    report.pass = report.violations == 0;
    report.detail("constant", c);
    report.detail("grid_points", grid.len() as f64);
    report.detail("replay_groups", groups.len() as f64);
    report.detail("replay_violations", replay_violations as f64);
    report.detail("max_qyp_minus_ct", worst_qyp);
    Ok(report)
}

/// Two-link moment chain
/// `tau Phi(|y|) <= int Phi(C mu(row (+) col)) <= M(C, Phi) (tau Phi(row) + tau Phi(col))`,
/// reported against `C_Phi = 2 M(C, Phi)`.
pub fn moment_chain_check(
    fam: &OperatorFamily,
    xs: &[TracedMatrix],
    phi: &OrliczFunction,
    tol: f64,
) -> Result<VerificationReport> {
    let c = certified_constant(fam)?;
    let modulus = dilation_modulus(phi, c)?;
    if modulus.unbounded {
        return Err(Error::Unbounded(format!("M({c}, {phi}) is not resolved by the grid")));
    }
    let m = modulus.value;
    let y = assemble(fam, xs)?;
    let mu_y = Spectrum::of(&y)?.mu();
    let sf = square_functions(xs)?;
    let (mu_row, mu_col) = (sf.row_spectrum().mu(), sf.col_spectrum().mu());
    let merged = merge_direct_sum(&mu_row, &mu_col);

    let moment_y = orlicz_integral(&mu_y, phi);
    let link_a = orlicz_integral(&merged.scaled(c), phi);
    let (moment_row, moment_col) = (orlicz_integral(&mu_row, phi), orlicz_integral(&mu_col, phi));
    let link_b = m * (moment_row + moment_col);
    let rhs = moment_row.max(moment_col);
    let bound = 2.0 * m;

    let mut report = base_report("moment-chain", fam, xs, tol).bounded(moment_y, rhs, bound);
    let link_a_ok = moment_y <= link_a * (1.0 + 1e-12);
    let link_b_ok = link_a <= link_b * (1.0 + tol);
    report.checks += 2;
    report.violations += usize::from(!link_a_ok) + usize::from(!link_b_ok);
    report.pass = report.violations == 0;
    report.detail("link_a_lhs", moment_y);
    report.detail("link_a_rhs", link_a);
    report.detail("link_b_rhs", link_b);
    report.detail("modulus", m);
    report.note(phi.to_string());
    Ok(report)
}

/// Which state of the family algebra defines the coefficient map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerProduct {
    /// The ambient matrix trace of the family context.
    Ambient,
    /// The vacuum vector state `<e_0, . e_0>` (Fock families).
    Vacuum,
}

/// Coefficients `xhat_i = sum_j (G^{-1})_ij (phi (x) id)((c_j^* (x) 1) y)`,
/// so `projection_coeffs(fam, assemble(fam, xs)) = xs` when `G` is the Gram
/// matrix of `phi`.
pub fn projection_coeffs(
    fam: &OperatorFamily,
    y: &TracedMatrix,
    inner: InnerProduct,
) -> Result<Vec<TracedMatrix>> {
    let outer = fam.ctx().dim();
    if !y.dim().is_multiple_of(outer) {
        return Err(Error::ContextMismatch(format!(
            "dimension {} is not a multiple of the family dimension {outer}",
            y.dim()
        )));
    }
    let n = y.dim() / outer;
    let (gram, density): (&CMat, Vec<(usize, f64)>) = match inner {
        InnerProduct::Ambient => {
            let w = fam.ctx().trace_weight();
            (fam.gram(), (0..outer).map(|a| (a, w)).collect())
        }
        InnerProduct::Vacuum => (fam.state_gram().ok_or(Error::MissingState)?, vec![(0, 1.0)]),
    };
    let inverse = gram.clone().try_inverse().ok_or(Error::SingularGram)?;
    let cond = gram.norm() * inverse.norm();
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::SingularGram);
    }

    let yy = y.entries();
    let partial: Vec<CMat> = fam
        .members()
        .iter()
        .map(|c| {
            let c = c.entries();
            let mut acc = CMat::zeros(n, n);
            for &(a, rho) in &density {
                for k in 0..outer {
                    let coeff = c[(k, a)].conj() * rho;
                    if coeff != Complex64::new(0.0, 0.0) {
                        acc += yy.view((k * n, a * n), (n, n)) * coeff;
                    }
                }
            }
            acc
        })
        .collect();

    let ctx = AlgebraContext::new(n, y.ctx().trace_weight() / fam.ctx().trace_weight())?;
    (0..fam.len())
        .map(|i| {
            let mut x = CMat::zeros(n, n);
            for (j, b) in partial.iter().enumerate() {
                x += b * inverse[(i, j)];
            }
            TracedMatrix::new(ctx, x)
        })
        .collect()
}

/// Functional averaged over random signs.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// The `L_p(Omega; S_p)` norm `(E |sum eps_i x_i|_p^p)^{1/p}` (max for `p = inf`).
    LpNorm(f64),
    /// `E tau(Phi(|sum eps_i x_i|))`.
    OrliczMoment(OrliczFunction),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageMode {
    Exhaustive,
    MonteCarlo { samples: usize, seed: u64 },
}

/// A Rademacher average; Monte Carlo results carry the standard error of
/// the averaged quantity (the `p`-th power for `LpNorm`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Average {
    pub value: f64,
    pub std_error: Option<f64>,
    pub samples: usize,
}

fn signed_sum(xs: &[TracedMatrix], signs: impl Fn(usize) -> f64) -> CMat {
    let n = xs[0].dim();
    let mut z = CMat::zeros(n, n);
    for (i, x) in xs.iter().enumerate() {
        z += x.entries() * Complex64::new(signs(i), 0.0);
    }
    z
}

/// Per-sample quantity: `|z|_p^p`, `|z|_inf`, or `tau Phi(|z|)`.
fn sample_value(z: &CMat, weight: f64, functional: &Functional) -> Result<f64> {
    let sv = singular_values_of(z)?;
    Ok(match functional {
        Functional::LpNorm(p) if p.is_infinite() => sv.first().copied().unwrap_or(0.0),
        Functional::LpNorm(p) => sv.iter().map(|s| weight * s.powf(*p)).sum(),
        Functional::OrliczMoment(phi) => sv.iter().map(|&s| weight * phi.eval(s)).sum(),
    })
}

/// `E_eps F(sum eps_i x_i)` by enumerating all sign vectors or by seeded sampling.
pub fn rademacher_average(
    xs: &[TracedMatrix],
    functional: &Functional,
    mode: AverageMode,
) -> Result<Average> {
    let ctx = common_ctx(xs)?;
    let d = xs.len();
    if let Functional::LpNorm(p) = functional {
        crate::spaces::check_exponent(*p)?;
    }
    let values: Vec<f64> = match mode {
        AverageMode::Exhaustive => {
            if d > RADEMACHER_CAP {
                return Err(Error::DimensionOverflow { dim: 1usize << d.min(63), cap: 1 << RADEMACHER_CAP });
            }
            (0..1usize << d)
                .map(|k| sample_value(&signed_sum(xs, |i| rademacher_sign(k, i)), ctx.trace_weight(), functional))
                .collect::<Result<_>>()?
        }
        AverageMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::DomainError("Monte Carlo needs at least one sample".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..samples)
                .map(|_| {
                    let signs: Vec<f64> =
                        (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                    sample_value(&signed_sum(xs, |i| signs[i]), ctx.trace_weight(), functional)
                })
                .collect::<Result<_>>()?
        }
    };
    let count = values.len() as f64;
    if let Functional::LpNorm(p) = functional {
        if p.is_infinite() {
            let value = values.iter().copied().fold(0.0, f64::max);
            return Ok(Average { value, std_error: None, samples: values.len() });
        }
    }
    let mean = values.iter().sum::<f64>() / count;
    let std_error = match mode {
        AverageMode::Exhaustive => None,
        AverageMode::MonteCarlo { .. } if values.len() > 1 => {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
            Some((var / count).sqrt())
        }
        AverageMode::MonteCarlo { .. } => None,
    };
    let value = match functional {
        Functional::LpNorm(p) => mean.powf(1.0 / p),
        Functional::OrliczMoment(_) => mean,
    };
    Ok(Average { value, std_error, samples: values.len() })
}

/// Target of a Rademacher comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum RademacherTarget {
    /// `|sum eps_i x_i|_{L_q} <= 4 sqrt(q) |row (+) col|_q`.
    Lq(f64),
    /// Ratio `E tau Phi(|sum eps_i x_i|) / max(tau Phi(row), tau Phi(col))`;
    /// no certified constant.
    Orlicz(OrliczFunction),
}

/// Exhaustive Rademacher average of `sum eps_i x_i` against the square functions.
pub fn rademacher_corollary_check(
    xs: &[TracedMatrix],
    target: &RademacherTarget,
    tol: f64,
) -> Result<VerificationReport> {
    let sf = square_functions(xs)?;
    let n = xs[0].dim();
    let dims = format!("n={n},d={}", xs.len());
    let base = VerificationReport::new("rademacher", tol)
        .with_family(format!("rademacher:d={}", xs.len()))
        .with_dims(dims);
    match target {
        RademacherTarget::Lq(q) => {
            if !(*q >= 1.0) || q.is_infinite() {
                return Err(Error::InvalidExponent(*q));
            }
            let lhs = rademacher_average(xs, &Functional::LpNorm(*q), AverageMode::Exhaustive)?.value;
            let rhs = lp_norm(&sf.merged_mu(), *q)?;
            let mut r = base.bounded(lhs, rhs, 4.0 * q.sqrt());
            r.detail("q", *q);
            Ok(r)
        }
        RademacherTarget::Orlicz(phi) => {
            let lhs = rademacher_average(xs, &Functional::OrliczMoment(phi.clone()), AverageMode::Exhaustive)?.value;
            let rhs = orlicz_integral(&sf.row_spectrum().mu(), phi).max(orlicz_integral(&sf.col_spectrum().mu(), phi));
            let mut r = base.ratio_only(lhs, rhs);
            r.note(phi.to_string());
            Ok(r)
        }
    }
}

/// A filtration of block-diagonal subalgebras of `M_n`, given by refining
/// partitions of `{0..n}` listed from the single block to the finest.
///
/// Pinching onto a partition is a trace-preserving conditional expectation;
/// finer partitions give smaller algebras, so martingale time runs from the
/// finest partition back to the single block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtration {
    n: usize,
    /// `labels[k][i]` is the block of index `i` in partition `k`.
    labels: Vec<Vec<usize>>,
}

impl Filtration {
    pub fn new(n: usize, partitions: &[Vec<Vec<usize>>]) -> Result<Self> {
        if n == 0 || partitions.is_empty() {
            return Err(Error::NotRefining("need n >= 1 and at least one partition".into()));
        }
        let mut labels = Vec::with_capacity(partitions.len());
        for (k, part) in partitions.iter().enumerate() {
            let mut label = vec![usize::MAX; n];
            for (b, block) in part.iter().enumerate() {
                if block.is_empty() {
                    return Err(Error::NotRefining(format!("partition {k} has an empty block")));
                }
                for &i in block {
                    if i >= n || label[i] != usize::MAX {
                        return Err(Error::NotRefining(format!("partition {k} is not a partition of 0..{n}")));
                    }
                    label[i] = b;
                }
            }
            if label.contains(&usize::MAX) {
                return Err(Error::NotRefining(format!("partition {k} does not cover 0..{n}")));
            }
            labels.push(label);
        }
        if partitions[0].len() != 1 {
            return Err(Error::NotRefining("the coarsest partition must be a single block".into()));
        }
        for k in 1..labels.len() {
            for i in 0..n {
                for j in 0..n {
                    if labels[k][i] == labels[k][j] && labels[k - 1][i] != labels[k - 1][j] {
                        return Err(Error::NotRefining(format!("partition {k} does not refine partition {}", k - 1)));
                    }
                }
            }
        }
        Ok(Self { n, labels })
    }

    /// Dyadic filtration of `M_n` (`n` a power of two) on a random ordering
    /// of the basis.
    pub fn random_dyadic(n: usize, rng: &mut impl Rng) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::NotRefining(format!("dyadic filtration needs a power of two, got {n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut partitions = Vec::new();
        let mut size = n;
        while size >= 1 {
            partitions.push(order.chunks(size).map(<[usize]>::to_vec).collect());
            size /= 2;
        }
        Self::new(n, &partitions)
    }

    pub fn levels(&self) -> usize {
        self.labels.len()
    }

    /// Pinching onto the block-diagonal algebra of partition `k`.
    pub fn pinch(&self, k: usize, x: &TracedMatrix) -> Result<TracedMatrix> {
        if x.dim() != self.n {
            return Err(Error::ContextMismatch(format!("filtration on M_{} applied to M_{}", self.n, x.dim())));
        }
        let label = &self.labels[k];
        let entries = DMatrix::from_fn(self.n, self.n, |i, j| {
            if label[i] == label[j] {
                x.entries()[(i, j)]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        TracedMatrix::new(*x.ctx(), entries)
    }

    /// Conditional expectation at martingale time `j` (0 = finest partition).
    fn expectation_at(&self, j: usize, x: &TracedMatrix) -> Result<TracedMatrix> {
        self.pinch(self.levels() - 1 - j, x)
    }

    /// Martingale differences `E_j(x) - E_{j-1}(x)`, `j = 1..levels`, in
    /// martingale time. They sum to `x - E_0(x)` with `E_0` the finest pinching.
    pub fn differences(&self, x: &TracedMatrix) -> Result<Vec<TracedMatrix>> {
        let steps: Vec<TracedMatrix> =
            (0..self.levels()).map(|j| self.expectation_at(j, x)).collect::<Result<_>>()?;
        steps.windows(2).map(|w| w[1].sub(&w[0])).collect()
    }

    /// `max_j |E_{j-1}(d_j)|_max`.
    pub fn martingale_defect(&self, diffs: &[TracedMatrix]) -> Result<f64> {
        let mut worst = 0.0f64;
        for (k, dk) in diffs.iter().enumerate() {
            worst = worst.max(self.expectation_at(k, dk)?.max_abs());
        }
        Ok(worst)
    }
}

/// Martingale differences of `x` along refining partitions of `{0..n}`.
pub fn martingale_differences(
    n: usize,
    partitions: &[Vec<Vec<usize>>],
    x: &TracedMatrix,
) -> Result<Vec<TracedMatrix>> {
    Filtration::new(n, partitions)?.differences(x)
}

/// How the left side of a Burkholder-Gundy comparison is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BgVariant {
    /// `tau Phi(|sum d_k|)`.
    #[default]
    Deterministic,
    /// `E tau Phi(|sum eps_k d_k|)` over all sign patterns.
    SignAverage,
}

/// Ratio of the `Phi`-moment of a martingale to the larger square-function
/// moment; ratio reporting only.
pub fn bg_check(
    filtration: &Filtration,
    diffs: &[TracedMatrix],
    phi: &OrliczFunction,
    variant: BgVariant,
    tol: f64,
) -> Result<VerificationReport> {
    let ctx = common_ctx(diffs)?;
    let scale = diffs.iter().map(TracedMatrix::max_abs).fold(1.0, f64::max);
    let defect = filtration.martingale_defect(diffs)?;
    if defect > 1e-10 * scale {
        return Err(Error::NotMartingale(defect));
    }
    let lhs = match variant {
        BgVariant::Deterministic => {
            let mut sum = TracedMatrix::zeros(ctx);
            for d in diffs {
                sum = sum.add(d)?;
            }
            crate::spaces::orlicz_moment(&sum, phi)?
        }
        BgVariant::SignAverage => {
            rademacher_average(diffs, &Functional::OrliczMoment(phi.clone()), AverageMode::Exhaustive)?.value
        }
    };
    let sf = square_functions(diffs)?;
    let rhs = orlicz_integral(&sf.row_spectrum().mu(), phi).max(orlicz_integral(&sf.col_spectrum().mu(), phi));
    let mut report = VerificationReport::new("bg", tol)
        .with_family(format!("pinching:n={}", ctx.dim()))
        .with_dims(format!("n={},levels={}", ctx.dim(), filtration.levels()))
        .ratio_only(lhs, rhs);
    report.detail("martingale_defect", defect);
    report.note(phi.to_string());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{rademacher_family, rc_family, semicircular_family};
    use approx::assert_relative_eq;

    fn ctx(n: usize) -> AlgebraContext {
        AlgebraContext::normalized(n).unwrap()
    }

    fn real(ctx: AlgebraContext, rows: &[f64]) -> TracedMatrix {
        let n = ctx.dim();
        TracedMatrix::new(ctx, CMat::from_row_slice(n, n, &rows.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>()))
            .unwrap()
    }

    #[test]
    fn square_functions_of_matrix_units() {
        let d = 3;
        let c = AlgebraContext::standard(d + 1).unwrap();
        let xs: Vec<_> = (1..=d).map(|i| TracedMatrix::matrix_unit(c, 1, i).unwrap()).collect();
        let sf = square_functions(&xs).unwrap();
        let mut row = vec![0.0; d + 1];
        row[1] = (d as f64).sqrt();
        assert!(sf.row.max_abs_diff(&TracedMatrix::from_real_diag(1.0, &row).unwrap()) < 1e-12);
        let mut col = vec![1.0; d + 1];
        col[0] = 0.0;
        assert!(sf.col.max_abs_diff(&TracedMatrix::from_real_diag(1.0, &col).unwrap()) < 1e-12);
    }

    #[test]
    fn square_functions_of_single_hermitian() {
        let x = real(ctx(2), &[1.0, 2.0, 2.0, -3.0]);
        let sf = square_functions(std::slice::from_ref(&x)).unwrap();
        let abs = x.abs().unwrap();
        assert!(sf.row.max_abs_diff(&abs) < 1e-12);
        assert!(sf.col.max_abs_diff(&abs) < 1e-12);

        let zero = TracedMatrix::zeros(ctx(2));
        let sf = square_functions(&[zero.clone(), zero]).unwrap();
        assert_eq!(sf.row.max_abs(), 0.0);
        assert_eq!(sf.col.max_abs(), 0.0);
        assert!(matches!(square_functions(&[]), Err(Error::ContextMismatch(_))));
    }

    #[test]
    fn assemble_elementary_tensor_norm() {
        let fam = semicircular_family(1, 2).unwrap();
        let x = real(ctx(2), &[0.3, -1.0, 2.0, 0.5]);
        let y = assemble(&fam, std::slice::from_ref(&x)).unwrap();
        assert_relative_eq!(
            y.norm_inf().unwrap(),
            2f64.sqrt() * x.norm_inf().unwrap(),
            max_relative = 1e-12
        );
        let zero = assemble(&fam, &[TracedMatrix::zeros(ctx(2))]).unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert!(assemble(&fam, &[x.clone(), x]).is_err());
    }

    #[test]
    fn upper_check_requires_certificate() {
        let fam = rademacher_family(2).unwrap();
        let xs = vec![TracedMatrix::identity(ctx(2)); 2];
        assert!(matches!(upper_ki_check(&fam, &xs, &NormSpec::Lp(2.0), 1e-9), Err(Error::MissingCertificate)));
    }

    #[test]
    fn upper_check_single_member() {
        let fam = semicircular_family(1, 3).unwrap();
        let x = real(ctx(2), &[1.0, 2.0, 0.0, 1.0]);
        let r = upper_ki_check(&fam, std::slice::from_ref(&x), &NormSpec::Lp(f64::INFINITY), 1e-9).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.rhs, x.norm_inf().unwrap(), max_relative = 1e-12);
        assert!(r.ratio <= 2.0);
    }

    #[test]
    fn rc_upper_equality_when_row_equals_col() {
        let fam = rc_family(2).unwrap();
        let xs = vec![TracedMatrix::identity(ctx(2)), TracedMatrix::identity(ctx(2))];
        let r = upper_ki_check(&fam, &xs, &NormSpec::Lp(f64::INFINITY), 1e-9).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lower_check_rademacher_p2_is_equality() {
        let fam = rademacher_family(3).unwrap();
        let xs = vec![
            real(ctx(2), &[1.0, 2.0, 0.0, 1.0]),
            real(ctx(2), &[0.0, 1.0, -1.0, 0.5]),
            real(ctx(2), &[3.0, 0.0, 0.0, 0.0]),
        ];
        let r = lower_ki_check(&fam, &xs, 2.0, 1e-9).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.ratio, 1.0, epsilon = 1e-12);
        assert!(lower_ki_check(&fam, &xs, 1.5, 1e-9).is_err());
        let r = lower_ki_check(&fam, &xs, 3.0, 1e-9).unwrap();
        assert!(r.bound.is_none());
    }

    #[test]
    fn lower_check_rejects_non_orthogonal() {
        let c = ctx(2);
        let a = real(c, &[1.0, 0.0, 0.0, 0.0]);
        let fam = OperatorFamily::custom(vec![a.clone(), a.clone()], None).unwrap();
        assert!(matches!(lower_ki_check(&fam, &[a.clone(), a], 2.0, 1e-9), Err(Error::NotOrthogonal(_))));
    }

    #[test]
    fn lower_check_single_member_reduces_to_norm_comparison() {
        // d = 1: C |x|_p <= |c|_p |x|_p, with C = |c|_2 <= |c|_p for normalized traces.
        let c = real(ctx(2), &[2.0, 0.0, 0.0, 0.5]);
        let fam = OperatorFamily::custom(vec![c.clone()], None).unwrap();
        let x = real(ctx(2), &[1.0, 1.0, 0.0, 1.0]);
        for p in [2.0, 4.0, f64::INFINITY] {
            let r = lower_ki_check(&fam, std::slice::from_ref(&x), p, 1e-9).unwrap();
            let expected = crate::spaces::schatten_norm(&c, 2.0).unwrap() / crate::spaces::schatten_norm(&c, p).unwrap();
            assert_relative_eq!(r.ratio, expected, max_relative = 1e-10);
        }
    }

    #[test]
    fn lemma_zero_inputs() {
        let fam = semicircular_family(2, 2).unwrap();
        let xs = vec![TracedMatrix::zeros(ctx(2)); 2];
        let r = lemma_dist_check(&fam, &xs, Some(&[0.5, 1.0]), 1e-9).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn lemma_endpoint_forces_norm_bound() {
        let fam = semicircular_family(2, 3).unwrap();
        let xs = vec![real(ctx(2), &[1.0, 2.0, 0.0, 1.0]), real(ctx(2), &[0.0, 1.0, -1.0, 0.5])];
        let sf = square_functions(&xs).unwrap();
        let t = sf.row_spectrum().norm().max(sf.col_spectrum().norm()) * (1.0 + 1e-6);
        let r = lemma_dist_check(&fam, &xs, Some(&[t]), 1e-9).unwrap();
        assert!(r.pass, "{r:?}");
        let y = assemble(&fam, &xs).unwrap();
        assert!(Spectrum::of(&y).unwrap().lambda(2.0 * t) == 0.0);
    }

    #[test]
    fn moment_chain_power_reduces_to_lp() {
        let fam = semicircular_family(2, 2).unwrap();
        let xs = vec![real(ctx(2), &[1.0, 2.0, 0.0, 1.0]), real(ctx(2), &[0.0, 1.0, -1.0, 0.5])];
        let phi = OrliczFunction::power(3.0).unwrap();
        let r = moment_chain_check(&fam, &xs, &phi, 1e-9).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.bound.unwrap(), 16.0);
        let up = upper_ki_check(&fam, &xs, &NormSpec::Lp(3.0), 1e-9).unwrap();
        assert_relative_eq!(r.details["link_a_lhs"], up.lhs.powi(3), max_relative = 1e-10);
        assert_relative_eq!(r.details["link_a_rhs"], (2.0 * up.rhs).powi(3), max_relative = 1e-10);

        let zeros = vec![TracedMatrix::zeros(ctx(2)); 2];
        let r = moment_chain_check(&fam, &zeros, &phi, 1e-9).unwrap();
        assert!(r.pass);
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn projection_recovers_rademacher_coefficients() {
        let fam = rademacher_family(2).unwrap();
        let xs = vec![real(ctx(2), &[1.0, 2.0, 0.0, 1.0]), real(ctx(2), &[0.0, 1.0, -1.0, 0.5])];
        let y = assemble(&fam, &xs).unwrap();
        let back = projection_coeffs(&fam, &y, InnerProduct::Ambient).unwrap();
        for (a, b) in back.iter().zip(&xs) {
            assert!(a.max_abs_diff(b) < 1e-12);
            assert_relative_eq!(a.ctx().trace_weight(), b.ctx().trace_weight(), max_relative = 1e-12);
        }
        assert!(matches!(projection_coeffs(&fam, &y, InnerProduct::Vacuum), Err(Error::MissingState)));
    }

    #[test]
    fn projection_kills_identity_component() {
        let fam = rademacher_family(3).unwrap();
        let x = real(ctx(2), &[1.0, 2.0, 0.0, 1.0]);
        let y = TracedMatrix::identity(*fam.ctx()).kron(&x).unwrap();
        for c in projection_coeffs(&fam, &y, InnerProduct::Ambient).unwrap() {
            assert!(c.max_abs() < 1e-12);
        }
    }

    #[test]
    fn projection_rejects_singular_gram() {
        let a = real(ctx(2), &[1.0, 0.0, 0.0, 0.0]);
        let fam = OperatorFamily::custom(vec![a.clone(), a.clone()], None).unwrap();
        let y = assemble(&fam, &[a.clone(), a]).unwrap();
        assert!(matches!(projection_coeffs(&fam, &y, InnerProduct::Ambient), Err(Error::SingularGram)));
    }

    #[test]
    fn rademacher_average_basics() {
        let x = real(ctx(2), &[1.0, 2.0, 0.0, 1.0]);
        let phi = OrliczFunction::power_log(2.0, 1.0).unwrap();
        let avg = rademacher_average(std::slice::from_ref(&x), &Functional::OrliczMoment(phi.clone()), AverageMode::Exhaustive)
            .unwrap();
        assert_relative_eq!(avg.value, crate::spaces::orlicz_moment(&x, &phi).unwrap(), max_relative = 1e-12);

        let xs = vec![x.clone(), real(ctx(2), &[0.0, 1.0, -1.0, 0.5]), real(ctx(2), &[0.0, 0.0, 2.0, 0.0])];
        let l2 = rademacher_average(&xs, &Functional::LpNorm(2.0), AverageMode::Exhaustive).unwrap();
        let expected: f64 = xs.iter().map(|x| crate::spaces::schatten_norm(x, 2.0).unwrap().powi(2)).sum();
        assert_relative_eq!(l2.value.powi(2), expected, max_relative = 1e-12);

        let mc = rademacher_average(&xs, &Functional::LpNorm(2.0), AverageMode::MonteCarlo { samples: 400, seed: 3 })
            .unwrap();
        let se = mc.std_error.unwrap();
        assert!((mc.value.powi(2) - expected).abs() <= 5.0 * se + 1e-12);
        let again = rademacher_average(&xs, &Functional::LpNorm(2.0), AverageMode::MonteCarlo { samples: 400, seed: 3 })
            .unwrap();
        assert_eq!(mc, again);

        let many = vec![x; 13];
        assert!(matches!(
            rademacher_average(&many, &Functional::LpNorm(2.0), AverageMode::Exhaustive),
            Err(Error::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn rademacher_corollary_examples() {
        let xs = vec![real(ctx(2), &[1.0, 2.0, 0.0, 1.0]), real(ctx(2), &[0.0, 1.0, -1.0, 0.5])];
        let r = rademacher_corollary_check(&xs, &RademacherTarget::Lq(2.0), 1e-9).unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.ratio, 0.5f64.sqrt(), max_relative = 1e-12);

        let phi = OrliczFunction::power(1.5).unwrap();
        let r = rademacher_corollary_check(&xs[..1], &RademacherTarget::Orlicz(phi), 1e-9).unwrap();
        assert_relative_eq!(r.ratio, 1.0, max_relative = 1e-12);
        assert!(r.bound.is_none());
    }

    #[test]
    fn filtration_examples() {
        let x = real(AlgebraContext::standard(2).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        let diffs = martingale_differences(2, &[vec![vec![0, 1]], vec![vec![0], vec![1]]], &x).unwrap();
        assert_eq!(diffs.len(), 1);
        let off = real(AlgebraContext::standard(2).unwrap(), &[0.0, 2.0, 3.0, 0.0]);
        assert_eq!(diffs[0], off);

        let trivial = vec![vec![vec![0, 1]]; 3];
        let diffs = martingale_differences(2, &trivial, &x).unwrap();
        assert!(diffs.iter().all(|d| d.max_abs() == 0.0));

        assert!(matches!(
            Filtration::new(3, &[vec![vec![0, 1, 2]], vec![vec![0, 1], vec![2]], vec![vec![0, 2], vec![1]]]),
            Err(Error::NotRefining(_))
        ));
        assert!(Filtration::new(2, &[vec![vec![0], vec![1]]]).is_err());
        assert!(Filtration::new(2, &[vec![vec![0, 1]], vec![vec![0]]]).is_err());
    }

    #[test]
    fn bg_degenerate_and_single() {
        let f = Filtration::new(2, &[vec![vec![0, 1]], vec![vec![0], vec![1]]]).unwrap();
        let zero = TracedMatrix::zeros(AlgebraContext::standard(2).unwrap());
        let phi = OrliczFunction::power(2.0).unwrap();
        let r = bg_check(&f, &[zero], &phi, BgVariant::Deterministic, 1e-9).unwrap();
        assert!(r.pass);
        assert_eq!(r.ratio, 0.0);

        let x = real(AlgebraContext::standard(2).unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        let diffs = f.differences(&x).unwrap();
        let phi = OrliczFunction::power_log(2.0, 1.0).unwrap();
        let r = bg_check(&f, &diffs, &phi, BgVariant::Deterministic, 1e-9).unwrap();
        assert!(r.ratio <= 1.0 + 1e-12);

        let not_mart = vec![x];
        assert!(matches!(bg_check(&f, &not_mart, &phi, BgVariant::Deterministic, 1e-9), Err(Error::NotMartingale(_))));
    }
}
