//! Decreasing rearrangements and distribution functions.
//!
//! For an `n x n` matrix with trace weight `w`, the distribution function
//! `lambda_t(x) = tau(E_(t,inf)(|x|))` counts singular values above `t`, and
//! its right-continuous inverse `mu_t(x)` lists the singular values in
//! decreasing order, each on an interval of length `w`. Both are finite
//! step functions and are represented exactly by [`StepFunction`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{spectral_tol, TracedMatrix};
use crate::report::VerificationReport;

/// A nonincreasing, right-continuous step function on `[0, inf)` with
/// finitely many steps, vanishing beyond its total width.
///
/// Steps are stored by value and right endpoint so that breakpoints are
/// reproduced bit-for-bit when a function is inverted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    values: Vec<f64>,
    ends: Vec<f64>,
}

impl StepFunction {
    pub fn zero() -> Self {
        Self { values: Vec::new(), ends: Vec::new() }
    }

    /// Builds a step function from `(value, width)` pairs.
    pub fn from_steps(steps: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut values = Vec::new();
        let mut ends = Vec::new();
        let mut end = 0.0;
        for (value, width) in steps {
            if !(width > 0.0) || !width.is_finite() {
                return Err(Error::DomainError(format!("step width must be positive, got {width}")));
            }
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::DomainError(format!("step value must be nonnegative, got {value}")));
            }
            if values.last().is_some_and(|&prev| value > prev) {
                return Err(Error::DomainError("step values must be nonincreasing".into()));
            }
            end += width;
            values.push(value);
            ends.push(end);
        }
        Ok(Self { values, ends })
    }

    /// Steps given by right endpoints; zero-width steps are dropped.
    fn from_ends(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut values = Vec::new();
        let mut ends: Vec<f64> = Vec::new();
        for (value, end) in pairs {
            if end > ends.last().copied().unwrap_or(0.0) {
                values.push(value);
                ends.push(end);
            }
        }
        Self { values, ends }
    }

    /// Evaluates the function at `t`; zero for `t >= total_width`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.ends.partition_point(|&e| e <= t);
        self.values.get(k).copied().unwrap_or(0.0)
    }

    pub fn total_width(&self) -> f64 {
        self.ends.last().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Right endpoints of the steps.
    pub fn ends(&self) -> &[f64] {
        &self.ends
    }

    /// `(value, width)` pairs in order.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let starts = std::iter::once(0.0).chain(self.ends.iter().copied());
        self.values.iter().zip(self.ends.iter().zip(starts)).map(|(&v, (&e, s))| (v, e - s))
    }

    /// `0` followed by every right endpoint.
    pub fn breakpoints(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.ends.iter().copied()).collect()
    }

    /// Value on the first step (the supremum).
    pub fn sup(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn integral(&self) -> f64 {
        self.steps().map(|(v, w)| v * w).sum()
    }

    /// `int f(sf(t)) dt` over the support; `f(0) = 0` is assumed beyond it.
    pub fn integral_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.steps().map(|(v, w)| f(v) * w).sum()
    }

    /// `c * sf` for `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ends: self.ends.clone() }
    }

    /// CSV-ready `(value, width)` rows.
    pub fn csv_rows(&self) -> Vec<[String; 2]> {
        self.steps().map(|(v, w)| [v.to_string(), w.to_string()]).collect()
    }
}

/// Descending singular values plus the trace weight: everything `mu` and
/// `lambda` depend on, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub weight: f64,
    pub tol: f64,
}

impl Spectrum {
    pub fn of(x: &TracedMatrix) -> Result<Self> {
        Ok(Self::from_singular_values(x.singular_values()?, x.ctx().trace_weight()))
    }

    pub fn from_singular_values(mut values: Vec<f64>, weight: f64) -> Self {
        values.sort_by(|a, b| b.total_cmp(a));
        let tol = spectral_tol(values.first().copied().unwrap_or(0.0));
        Self { values, weight, tol }
    }

    pub fn norm(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// Number of singular values strictly above `level` (no tolerance).
    pub fn count_above(&self, level: f64) -> usize {
        self.values.partition_point(|&s| s > level)
    }

    /// `lambda_t` with the strict comparison `s > t + tol`.
    pub fn lambda(&self, t: f64) -> f64 {
        self.weight * self.count_above(t + self.tol) as f64
    }

    /// `lambda_t` counting every value within `tol` of `t` as above it.
    pub fn lambda_upper(&self, t: f64) -> f64 {
        self.weight * self.count_above(t - self.tol) as f64
    }

    pub fn mu(&self) -> StepFunction {
        StepFunction::from_ends(
            self.values.iter().enumerate().map(|(k, &s)| (s, self.weight * (k + 1) as f64)),
        )
    }
}

/// The decreasing rearrangement `mu(x)`.
pub fn mu(x: &TracedMatrix) -> Result<StepFunction> {
    Ok(Spectrum::of(x)?.mu())
}

/// `lambda_t(x) = tau(E_(t,inf)(|x|))`.
pub fn lambda_at(x: &TracedMatrix, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeLevel(t));
    }
    Ok(Spectrum::of(x)?.lambda(t))
}

/// The distribution function `s -> lambda_s` of a rearrangement, as a step
/// function of the level `s`.
///
/// Its breakpoints are the distinct values of `mu` and its values are the
/// right endpoints of `mu`, both copied exactly.
pub fn distribution(mu: &StepFunction) -> StepFunction {
    // Last step of each run of equal values, from the smallest value upward.
    let mut pairs = Vec::new();
    for k in (0..mu.len()).rev() {
        let last_of_run = k + 1 == mu.len() || mu.values[k + 1] < mu.values[k];
        if last_of_run {
            pairs.push((mu.ends[k], mu.values[k]));
        }
    }
    StepFunction::from_ends(pairs)
}

/// The distribution function `lambda(x)`.
pub fn lambda(x: &TracedMatrix) -> Result<StepFunction> {
    Ok(distribution(&mu(x)?))
}

/// `inf { s > 0 : lam(s) <= t }`.
pub fn right_inverse(lam: &StepFunction, t: f64) -> f64 {
    let mut start = 0.0;
    for (&value, &end) in lam.values.iter().zip(&lam.ends) {
        if value <= t {
            return start;
        }
        start = end;
    }
    start
}

/// Rearrangement of `x (+) x'` from the rearrangements of `x` and `x'`.
pub fn merge_direct_sum(a: &StepFunction, b: &StepFunction) -> StepFunction {
    let mut steps: Vec<(f64, f64)> = a.steps().chain(b.steps()).collect();
    steps.sort_by(|p, q| q.0.total_cmp(&p.0));
    StepFunction::from_steps(steps).expect("merged steps are valid")
}

/// Sorted, deduplicated points together with every midpoint between them.
pub fn refine_grid(mut points: Vec<f64>) -> Vec<f64> {
    points.retain(|p| p.is_finite() && *p >= 0.0);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut out = Vec::with_capacity(2 * points.len());
    for w in points.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    if let Some(&last) = points.last() {
        out.push(last);
        out.push(last + 1.0);
    }
    out
}

/// Grid of levels covering every breakpoint of the distribution functions.
pub fn level_grid<'a>(spectra: impl IntoIterator<Item = &'a Spectrum>) -> Vec<f64> {
    let mut points = vec![0.0];
    for s in spectra {
        points.extend(s.values.iter().copied());
    }
    refine_grid(points)
}

/// Checks the three distribution-function facts
/// `lambda_t(x) = lambda_t(x*)`, `lambda_{t+s}(x+y) <= lambda_t(x) + lambda_s(y)`
/// and `lambda_t(xq) <= tau(q)` on a grid of levels.
pub fn fk_property_check(
    x: &TracedMatrix,
    y: &TracedMatrix,
    q: &TracedMatrix,
    t_grid: Option<&[f64]>,
    s_grid: Option<&[f64]>,
) -> Result<VerificationReport> {
    let q_sq = q.matmul(q)?;
    let q_tol = spectral_tol(q.max_abs());
    let idempotency = q_sq.sub(q)?.norm_inf()?;
    let deviation = idempotency.max(q.hermiticity_defect());
    if deviation > q_tol {
        return Err(Error::NotProjection { deviation });
    }

    let sx = Spectrum::of(x)?;
    let sx_adj = Spectrum::of(&x.adjoint())?;
    let sy = Spectrum::of(y)?;
    let sxy = Spectrum::of(&x.add(y)?)?;
    let sxq = Spectrum::of(&x.matmul(q)?)?;
    let tau_q = q.trace().re;

    let t_grid = t_grid.map(<[f64]>::to_vec).unwrap_or_else(|| level_grid([&sx, &sxq]));
    let s_grid = s_grid.map(<[f64]>::to_vec).unwrap_or_else(|| level_grid([&sy]));
    if let Some(&bad) = t_grid.iter().chain(&s_grid).find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeLevel(bad));
    }

    let mut report = VerificationReport::new("fk-fuzz", q_tol);
    report.bound = Some(1.0);
    let mut worst = (0.0, 0.0, 0.0);
    let mut record = |report: &mut VerificationReport, lhs: f64, rhs: f64, ok: bool| {
        report.checks += 1;
        if !ok {
            report.violations += 1;
        }
        if crate::report::ratio_of(lhs, rhs) > worst.0 {
            worst = (crate::report::ratio_of(lhs, rhs), lhs, rhs);
        }
    };

    let mass_slack = 1e-9 * x.ctx().total_mass();
    for &t in &t_grid {
        let (a, b) = (sx.lambda(t), sx_adj.lambda(t));
        let ok = a <= sx_adj.lambda_upper(t) && b <= sx.lambda_upper(t);
        record(&mut report, a, b, ok);

        let lhs = sxq.lambda(t);
        record(&mut report, lhs, tau_q, lhs <= tau_q + mass_slack);

        for &s in &s_grid {
            let lhs = sxy.lambda(t + s);
            let rhs = sx.lambda_upper(t) + sy.lambda_upper(s);
            record(&mut report, lhs, rhs, lhs <= rhs);
        }
    }
    report.lhs = worst.1;
    report.rhs = worst.2;
    report.ratio = crate::report::ratio_of(worst.1, worst.2);
    report.pass = report.violations == 0;
    report.dims = format!("n={}", x.dim());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::AlgebraContext;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn projection(n: usize, k: usize) -> TracedMatrix {
        let diag: Vec<f64> = (0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
        TracedMatrix::from_real_diag(1.0 / n as f64, &diag).unwrap()
    }

    #[test]
    fn mu_of_complex_diagonal() {
        let x = TracedMatrix::from_diag(
            1.0 / 3.0,
            &[Complex64::new(0.0, 3.0), Complex64::new(-1.0, 0.0), Complex64::new(2.0, 0.0)],
        )
        .unwrap();
        let m = mu(&x).unwrap();
        assert_relative_eq!(m.eval(0.0), 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.eval(0.2), 3.0, epsilon = 1e-14);
        assert_relative_eq!(m.eval(0.5), 2.0, epsilon = 1e-14);
        assert_relative_eq!(m.eval(0.9), 1.0, epsilon = 1e-14);
        assert_eq!(m.eval(1.0), 0.0);
        assert_relative_eq!(m.total_width(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mu_and_lambda_of_projection() {
        let p = projection(5, 2);
        let m = mu(&p).unwrap();
        assert_eq!(m.eval(0.0), 1.0);
        assert_eq!(m.eval(0.39), 1.0);
        assert_eq!(m.eval(0.41), 0.0);
        assert_relative_eq!(lambda_at(&p, 0.0).unwrap(), 0.4);
        assert_relative_eq!(lambda_at(&p, 0.99).unwrap(), 0.4);
        assert_eq!(lambda_at(&p, 1.0).unwrap(), 0.0);
        assert!(matches!(lambda_at(&p, -1.0), Err(Error::NegativeLevel(_))));

        let lam = lambda(&p).unwrap();
        assert_eq!(right_inverse(&lam, 0.4 - 1e-9), 1.0);
        assert_eq!(right_inverse(&lam, 0.4), 0.0);
        assert_eq!(right_inverse(&lam, 0.7), 0.0);
    }

    #[test]
    fn lambda_counts_strictly_above() {
        let x = TracedMatrix::from_real_diag(1.0, &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(lambda_at(&x, 1.5).unwrap(), 2.0);
        assert_eq!(lambda_at(&x, 2.0).unwrap(), 1.0);
        let p = x.spectral_projection(1.5).unwrap();
        assert_relative_eq!(p.trace().re, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn right_inverse_enumerates_levels() {
        let x = TracedMatrix::from_real_diag(1.0, &[3.0, 1.0, 2.0]).unwrap();
        let lam = lambda(&x).unwrap();
        assert_eq!(right_inverse(&lam, 0.0), 3.0);
        assert_eq!(right_inverse(&lam, 1.0), 2.0);
        assert_eq!(right_inverse(&lam, 2.0), 1.0);
        assert_eq!(right_inverse(&lam, 3.0), 0.0);
        assert_eq!(right_inverse(&StepFunction::zero(), 0.0), 0.0);
        assert_eq!(right_inverse(&StepFunction::zero(), 5.0), 0.0);
    }

    #[test]
    fn merge_examples() {
        let x = TracedMatrix::from_real_diag(1.0, &[3.0, 1.0]).unwrap();
        let xp = TracedMatrix::from_real_diag(1.0, &[2.0]).unwrap();
        let merged = merge_direct_sum(&mu(&x).unwrap(), &mu(&xp).unwrap());
        assert_eq!(merged.values(), &[3.0, 2.0, 1.0]);
        assert_eq!(merged.steps().map(|s| s.1).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);

        let mx = mu(&x).unwrap();
        assert_eq!(merge_direct_sum(&mx, &StepFunction::zero()), mx);

        let p = TracedMatrix::from_real_diag(1.0, &[1.0]).unwrap();
        let m = merge_direct_sum(&mu(&p).unwrap(), &mu(&p).unwrap());
        assert_eq!(m.eval(0.0), 1.0);
        assert_eq!(m.eval(1.5), 1.0);
        assert_eq!(m.eval(2.0), 0.0);
    }

    #[test]
    fn from_steps_rejects_bad_input() {
        assert!(StepFunction::from_steps([(1.0, 0.0)]).is_err());
        assert!(StepFunction::from_steps([(1.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(StepFunction::from_steps([(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn fk_zero_operands() {
        let ctx = AlgebraContext::standard(2).unwrap();
        let zero = TracedMatrix::zeros(ctx);
        let q = TracedMatrix::from_real_diag(1.0, &[1.0, 0.0]).unwrap();
        let r = fk_property_check(&zero, &zero, &q, None, None).unwrap();
        assert!(r.pass);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn fk_disjoint_projections() {
        let x = TracedMatrix::from_real_diag(1.0, &[1.0, 0.0]).unwrap();
        let y = TracedMatrix::from_real_diag(1.0, &[0.0, 1.0]).unwrap();
        assert_eq!(lambda_at(&x.add(&y).unwrap(), 1.0).unwrap(), 0.0);
        assert_eq!(lambda_at(&x, 0.5).unwrap() + lambda_at(&y, 0.5).unwrap(), 2.0);
        let r = fk_property_check(&x, &y, &x, Some(&[0.5]), Some(&[0.5])).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn fk_rejects_non_projection() {
        let x = TracedMatrix::from_real_diag(1.0, &[1.0, 0.0]).unwrap();
        let q = TracedMatrix::from_real_diag(1.0, &[0.5, 0.0]).unwrap();
        assert!(matches!(
            fk_property_check(&x, &x, &q, None, None),
            Err(Error::NotProjection { .. })
        ));
    }
}
