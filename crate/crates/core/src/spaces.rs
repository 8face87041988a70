//! Symmetric-space functionals: Schatten norms, Orlicz moments, weak
//! moments, and the dilation modulus / indices of an Orlicz function.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::matrix::TracedMatrix;
use crate::spectral::{mu, StepFunction};

/// Log-spaced grid used both to audit Orlicz functions and to approximate
/// `sup_s Phi(ts) / Phi(s)` when no closed form is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for LogGrid {
    fn default() -> Self {
        Self { lo: 1e-8, hi: 1e8, points: 512 }
    }
}

impl LogGrid {
    pub fn nodes(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let n = self.points.max(2);
        (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
    }
}

type PhiFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied Orlicz function, audited at construction.
#[derive(Clone)]
pub struct CustomOrlicz {
    name: String,
    f: PhiFn,
}

/// A convex nondecreasing `Phi` with `Phi(0) = 0`.
#[derive(Clone)]
pub enum OrliczFunction {
    /// `t^p`
    Power { p: f64 },
    /// `t^p log(1+t)^a`
    PowerLog { p: f64, a: f64 },
    Custom(CustomOrlicz),
}

impl fmt::Debug for OrliczFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OrliczFunction({self})")
    }
}

impl PartialEq for OrliczFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Power { p }, Self::Power { p: q }) => p == q,
            (Self::PowerLog { p, a }, Self::PowerLog { p: q, a: b }) => p == q && a == b,
            (Self::Custom(x), Self::Custom(y)) => Arc::ptr_eq(&x.f, &y.f),
            _ => false,
        }
    }
}

impl fmt::Display for OrliczFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power { p } => write!(f, "power:p={p}"),
            Self::PowerLog { p, a } => write!(f, "powerlog:p={p},a={a}"),
            Self::Custom(c) => write!(f, "custom:{}", c.name),
        }
    }
}

impl OrliczFunction {
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidExponent(p));
        }
        Ok(Self::Power { p })
    }

    pub fn power_log(p: f64, a: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidExponent(p));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::DomainError(format!("log exponent must be positive, got {a}")));
        }
        Ok(Self::PowerLog { p, a })
    }

    /// Wraps an arbitrary function after auditing it on the default grid.
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let phi = Self::Custom(CustomOrlicz { name: name.into(), f: Arc::new(f) });
        phi.audit(&LogGrid::default())?;
        Ok(phi)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Power { p } => t.powf(*p),
            Self::PowerLog { p, a } => t.powf(*p) * t.ln_1p().powf(*a),
            Self::Custom(c) => (c.f)(t),
        }
    }

    /// Checks `Phi(0) = 0`, monotonicity and midpoint convexity on `grid`.
    pub fn audit(&self, grid: &LogGrid) -> Result<()> {
        let zero = match self {
            Self::Custom(c) => (c.f)(0.0),
            _ => 0.0,
        };
        if zero != 0.0 {
            return Err(Error::NotOrlicz(format!("Phi(0) = {zero}")));
        }
        let mut nodes = vec![0.0];
        nodes.extend(grid.nodes());
        let vals: Vec<f64> = nodes.iter().map(|&s| self.eval(s)).collect();
        let slack = |v: f64| 1e-12 * v.abs().max(f64::MIN_POSITIVE);
        for k in 0..nodes.len() {
            if vals[k].is_nan() || vals[k] < 0.0 {
                return Err(Error::NotOrlicz(format!("Phi({}) = {}", nodes[k], vals[k])));
            }
            if k + 1 < nodes.len() && vals[k + 1] < vals[k] - slack(vals[k]) {
                return Err(Error::NotOrlicz(format!("decreasing near s = {}", nodes[k])));
            }
            for j in [1, 4] {
                if k + j < nodes.len() {
                    let (s, t) = (nodes[k], nodes[k + j]);
                    let mid = self.eval(0.5 * (s + t));
                    let chord = 0.5 * (vals[k] + vals[k + j]);
                    if mid > chord + slack(chord) {
                        return Err(Error::NotOrlicz(format!("not midpoint convex on [{s}, {t}]")));
                    }
                }
            }
        }
        Ok(())
    }
}

impl FromStr for OrliczFunction {
    type Err = Error;

    /// Parses catalog tags such as `power:p=2` and `powerlog:p=2,a=1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDescriptor(s.to_owned());
        let (kind, params) = s.trim().split_once(':').ok_or_else(bad)?;
        let params = parse_params(params).ok_or_else(bad)?;
        let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
        let known = |keys: &[&str]| params.iter().all(|(k, _)| keys.contains(&k.as_str()));
        match kind {
            "power" if known(&["p"]) => Self::power(get("p").ok_or_else(bad)?),
            "powerlog" if known(&["p", "a"]) => {
                Self::power_log(get("p").ok_or_else(bad)?, get("a").unwrap_or(1.0))
            }
            _ => Err(bad()),
        }
    }
}

pub(crate) fn parse_params(s: &str) -> Option<Vec<(String, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=')?;
            Some((k.trim().to_owned(), v.trim().parse().ok()?))
        })
        .collect()
}

/// An exponent in `[1, inf]`.
pub fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent(p))
    }
}

/// `L_p` norm of a step function, `p = inf` allowed.
pub fn lp_norm(sf: &StepFunction, p: f64) -> Result<f64> {
    check_exponent(p)?;
    let top = sf.sup();
    if p.is_infinite() || top == 0.0 {
        return Ok(top);
    }
    let sum: f64 = sf.steps().map(|(v, w)| w * (v / top).powf(p)).sum();
    Ok(top * sum.powf(1.0 / p))
}

/// Schatten `p`-norm `(sum_k w s_k^p)^{1/p}` of a traced matrix.
pub fn schatten_norm(x: &TracedMatrix, p: f64) -> Result<f64> {
    check_exponent(p)?;
    lp_norm(&mu(x)?, p)
}

/// `int Phi(sf(t)) dt`.
pub fn orlicz_integral(sf: &StepFunction, phi: &OrliczFunction) -> f64 {
    sf.integral_of(|v| phi.eval(v))
}

/// `tau(Phi(|x|)) = sum_k w Phi(s_k)`.
pub fn orlicz_moment(x: &TracedMatrix, phi: &OrliczFunction) -> Result<f64> {
    let w = x.ctx().trace_weight();
    Ok(x.singular_values()?.iter().map(|&s| w * phi.eval(s)).sum())
}

/// Which weak `Phi`-moment to compute. There is deliberately no default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakVariant {
    /// `sup_{t>0} Phi(mu_t(x))`, which always equals `Phi(|x|_inf)`.
    Literal,
    /// `sup_{s>0} Phi(s) lambda_s(x)`.
    Chebyshev,
}

/// Weak moment of a rearrangement.
pub fn weak_moment_of(sf: &StepFunction, phi: &OrliczFunction, variant: WeakVariant) -> f64 {
    match variant {
        WeakVariant::Literal => phi.eval(sf.sup()),
        // Just below a value v_k, lambda equals the right endpoint of the
        // last step carrying v_k.
        WeakVariant::Chebyshev => sf
            .values()
            .iter()
            .zip(sf.ends())
            .map(|(&v, &end)| phi.eval(v) * end)
            .fold(0.0, f64::max),
    }
}

pub fn weak_moment(x: &TracedMatrix, phi: &OrliczFunction, variant: WeakVariant) -> Result<f64> {
    Ok(weak_moment_of(&mu(x)?, phi, variant))
}

/// Value of `M(t, Phi) = sup_{s>0} Phi(ts)/Phi(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus {
    pub value: f64,
    /// `true` when `value` comes from a closed form rather than the grid.
    pub exact: bool,
    /// Grid bounds over which the supremum was taken (grid evaluations only).
    pub s_range: Option<(f64, f64)>,
    /// The grid supremum was still growing at a grid boundary.
    pub unbounded: bool,
}

/// Relative growth across the last grid cell above which a boundary supremum
/// is reported as unbounded.
const BOUNDARY_GROWTH: f64 = 1e-6;

/// `sup_s Phi(ts)/Phi(s)` over the nodes of `grid`.
pub fn dilation_modulus_grid(phi: &OrliczFunction, t: f64, grid: &LogGrid) -> Result<Modulus> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::DomainError(format!("dilation factor must be positive, got {t}")));
    }
    let ratios: Vec<f64> = grid
        .nodes()
        .into_iter()
        .filter_map(|s| {
            let den = phi.eval(s);
            (den > 0.0 && den.is_finite()).then(|| phi.eval(t * s) / den)
        })
        .collect();
    if ratios.is_empty() {
        return Err(Error::DomainError("Phi vanishes on the whole grid".into()));
    }
    let (arg, &value) = ratios
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let last = ratios.len() - 1;
    let grows_at = |edge: usize, inner: usize| {
        ratios.len() > 1 && ratios[edge] > ratios[inner] * (1.0 + BOUNDARY_GROWTH)
    };
    let unbounded = !value.is_finite()
        || (arg == 0 && grows_at(0, 1))
        || (arg == last && grows_at(last, last.saturating_sub(1)));
    Ok(Modulus { value, exact: false, s_range: Some((grid.lo, grid.hi)), unbounded })
}

/// `M(t, Phi)`: closed forms for the catalog families, grid otherwise.
///
/// For `t^p log(1+t)^a` the ratio `log(1+ts)/log(1+s)` is monotone in `s`
/// with limits `t` at 0 and `1` at infinity, so `M(t) = t^p max(1, t)^a`.
pub fn dilation_modulus(phi: &OrliczFunction, t: f64) -> Result<Modulus> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::DomainError(format!("dilation factor must be positive, got {t}")));
    }
    let closed = |value: f64| Modulus { value, exact: true, s_range: None, unbounded: false };
    match phi {
        OrliczFunction::Power { p } => Ok(closed(t.powf(*p))),
        OrliczFunction::PowerLog { p, a } => Ok(closed(t.powf(*p) * t.max(1.0).powf(*a))),
        OrliczFunction::Custom(_) => dilation_modulus_grid(phi, t, &LogGrid::default()),
    }
}

/// The least constant `C` with `Phi(2t) <= C Phi(t)`.
pub fn delta2_constant(phi: &OrliczFunction) -> Result<f64> {
    let m = dilation_modulus(phi, 2.0)?;
    if m.unbounded {
        return Err(Error::Unbounded(format!("{phi} fails the global Delta2 condition on the grid")));
    }
    Ok(m.value)
}

/// Estimates of the lower and upper indices with their spreads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indices {
    pub p_phi: f64,
    pub q_phi: f64,
    /// Spread of `log M(t)/log t` across the dyadic levels near 0.
    pub p_spread: f64,
    /// Same, near infinity.
    pub q_spread: f64,
}

fn slope_estimate(phi: &OrliczFunction, exponents: impl Iterator<Item = i32>) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in exponents {
        let t = 2f64.powi(k);
        let m = dilation_modulus(phi, t)?;
        if m.unbounded || !(m.value > 0.0) || !m.value.is_finite() {
            return Err(Error::Unbounded(format!("M({t}, {phi}) = {}", m.value)));
        }
        xs.push(t.ln());
        ys.push(m.value.ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let pointwise: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y / x).collect();
    let spread = pointwise.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - pointwise.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((slope, spread))
}

/// Least-squares slopes of `log M(t)` against `log t` at `t = 2^{-k}` and
/// `t = 2^k`, `k = 8..=16`.
pub fn orlicz_indices(phi: &OrliczFunction) -> Result<Indices> {
    let (p_phi, p_spread) = slope_estimate(phi, (8..=16).map(|k: i32| -k))?;
    let (q_phi, q_spread) = slope_estimate(phi, 8..=16)?;
    Ok(Indices { p_phi, q_phi, p_spread, q_spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn x122() -> TracedMatrix {
        TracedMatrix::from_real_diag(1.0, &[1.0, 2.0, 2.0]).unwrap()
    }

    #[test]
    fn schatten_examples() {
        let x = x122();
        assert_relative_eq!(schatten_norm(&x, 2.0).unwrap(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(schatten_norm(&x, f64::INFINITY).unwrap(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(schatten_norm(&x, 1.0).unwrap(), 5.0, epsilon = 1e-14);
        assert!(matches!(schatten_norm(&x, 0.5), Err(Error::InvalidExponent(_))));
        assert!(schatten_norm(&x, f64::NAN).is_err());
    }

    #[test]
    fn orlicz_moment_examples() {
        let x = x122();
        let p3 = OrliczFunction::power(3.0).unwrap();
        assert_relative_eq!(
            orlicz_moment(&x, &p3).unwrap(),
            schatten_norm(&x, 3.0).unwrap().powi(3),
            max_relative = 1e-13
        );

        let proj = TracedMatrix::from_real_diag(0.25, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let pl = OrliczFunction::power_log(2.0, 1.0).unwrap();
        assert_relative_eq!(orlicz_moment(&proj, &pl).unwrap(), 2.0 * 0.25 * pl.eval(1.0));

        let x = TracedMatrix::from_real_diag(1.0, &[1.0, 3.0]).unwrap();
        assert_relative_eq!(
            orlicz_moment(&x, &pl).unwrap(),
            2f64.ln() + 9.0 * 4f64.ln(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn weak_moment_examples() {
        let x = TracedMatrix::from_real_diag(0.5, &[0.5, 3.0]).unwrap();
        let pl = OrliczFunction::power_log(2.0, 1.0).unwrap();
        assert_relative_eq!(weak_moment(&x, &pl, WeakVariant::Literal).unwrap(), pl.eval(3.0));

        let proj = TracedMatrix::from_real_diag(0.2, &[1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let id = OrliczFunction::power(1.0).unwrap();
        assert_relative_eq!(weak_moment(&proj, &id, WeakVariant::Chebyshev).unwrap(), 0.4);
    }

    #[test]
    fn modulus_examples() {
        let p = OrliczFunction::power(2.5).unwrap();
        assert_relative_eq!(dilation_modulus(&p, 3.0).unwrap().value, 3f64.powf(2.5));
        let pl = OrliczFunction::power_log(2.0, 1.0).unwrap();
        assert_eq!(dilation_modulus(&pl, 1.0).unwrap().value, 1.0);
        assert_relative_eq!(dilation_modulus(&pl, 0.5).unwrap().value, 0.25);
        assert_relative_eq!(dilation_modulus(&pl, 2.0).unwrap().value, 8.0);
        assert!(matches!(dilation_modulus(&pl, 0.0), Err(Error::DomainError(_))));
        assert!(matches!(dilation_modulus(&pl, -1.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn grid_modulus_agrees_with_closed_form_where_grid_resolves() {
        // For t >= 1 the supremum sits at s -> 0, which the grid resolves.
        let pl = OrliczFunction::power_log(2.0, 1.0).unwrap();
        for t in [1.0, 1.5, 2.0, 4.0] {
            let g = dilation_modulus_grid(&pl, t, &LogGrid::default()).unwrap();
            assert!(!g.unbounded, "t = {t}");
            assert_relative_eq!(g.value, t.powi(3), max_relative = 1e-6);
        }
        let p = OrliczFunction::power(1.7).unwrap();
        let g = dilation_modulus_grid(&p, 0.3, &LogGrid::default()).unwrap();
        assert_relative_eq!(g.value, 0.3f64.powf(1.7), max_relative = 1e-12);
        assert!(!g.unbounded);
    }

    #[test]
    fn grid_flags_non_delta2_functions() {
        let exp = OrliczFunction::custom("exp", |t: f64| t.exp_m1() - t).unwrap();
        let m = dilation_modulus(&exp, 2.0).unwrap();
        assert!(m.unbounded);
        assert!(matches!(delta2_constant(&exp), Err(Error::Unbounded(_))));
    }

    #[test]
    fn custom_audit_rejects_non_convex_and_nonzero_origin() {
        assert!(matches!(
            OrliczFunction::custom("sqrt", |t: f64| t.sqrt()),
            Err(Error::NotOrlicz(_))
        ));
        assert!(matches!(
            OrliczFunction::custom("shift", |t: f64| t * t + 1.0),
            Err(Error::NotOrlicz(_))
        ));
        let cube = OrliczFunction::custom("cube", |t: f64| t.powi(3)).unwrap();
        assert_relative_eq!(delta2_constant(&cube).unwrap(), 8.0, max_relative = 1e-9);
    }

    #[test]
    fn indices_and_delta2() {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let phi = OrliczFunction::power(p).unwrap();
            let ix = orlicz_indices(&phi).unwrap();
            assert!((ix.p_phi - p).abs() < 1e-6 && (ix.q_phi - p).abs() < 1e-6);
            assert_relative_eq!(delta2_constant(&phi).unwrap(), 2f64.powf(p), max_relative = 1e-12);
        }
        let pl = OrliczFunction::power_log(2.0, 1.0).unwrap();
        let ix = orlicz_indices(&pl).unwrap();
        assert!((ix.p_phi - 2.0).abs() < 5e-2, "{ix:?}");
        assert!((ix.q_phi - 3.0).abs() < 5e-2, "{ix:?}");
        assert_relative_eq!(delta2_constant(&pl).unwrap(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn catalog_tags_parse() {
        assert_eq!("power:p=2".parse::<OrliczFunction>().unwrap(), OrliczFunction::Power { p: 2.0 });
        assert_eq!(
            "powerlog:p=2,a=1".parse::<OrliczFunction>().unwrap(),
            OrliczFunction::PowerLog { p: 2.0, a: 1.0 }
        );
        for bad in ["power", "power:p=0.5", "powerlog:p=2,b=1", "cosh:p=2", "power:p=x"] {
            assert!(bad.parse::<OrliczFunction>().is_err(), "{bad}");
        }
        let phi: OrliczFunction = "powerlog:p=2,a=1".parse().unwrap();
        assert_eq!(phi.to_string().parse::<OrliczFunction>().unwrap(), phi);
    }
}
