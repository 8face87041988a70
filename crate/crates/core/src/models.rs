//! Operator families `(c_1, ..., c_d)` living in one finite algebra.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{check_dim, AlgebraContext, CMat, TracedMatrix};
use crate::spaces::parse_params;

/// Largest `d` accepted by [`rademacher_family`] (the algebra has size `2^d`).
pub const RADEMACHER_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Fock,
    Gue,
    Rademacher,
    Rc,
    Custom,
}

/// A finite family of operators in a common algebra context.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    members: Vec<TracedMatrix>,
    kind: FamilyKind,
    descriptor: String,
    linfty_constant: Option<f64>,
    gram: CMat,
    state_gram: Option<CMat>,
}

/// `G_ij = tau(c_i^* c_j)` under the ambient trace.
fn ambient_gram(members: &[TracedMatrix]) -> CMat {
    let d = members.len();
    DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (members[i].entries(), members[j].entries());
        // tr(a^* b) = sum conj(a_kl) b_kl
        let tr: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        tr * members[i].ctx().trace_weight()
    })
}

/// `G_ij = <c_i e_0, c_j e_0>`, the vacuum-state Gram matrix.
fn vacuum_gram(members: &[TracedMatrix]) -> CMat {
    let d = members.len();
    DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (members[i].entries().column(0), members[j].entries().column(0));
        a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
    })
}

impl OperatorFamily {
    /// A family without a model behind it. `linfty_constant` must be a
    /// proven constant if supplied; it switches upper checks to pass/fail.
    pub fn custom(members: Vec<TracedMatrix>, linfty_constant: Option<f64>) -> Result<Self> {
        Self::assemble(members, FamilyKind::Custom, "custom".into(), linfty_constant, None)
    }

    fn assemble(
        members: Vec<TracedMatrix>,
        kind: FamilyKind,
        descriptor: String,
        linfty_constant: Option<f64>,
        state_gram: Option<CMat>,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::DomainError("a family needs at least one member".into()))?;
        if members.iter().any(|m| m.ctx() != first.ctx()) {
            return Err(Error::ContextMismatch("family members must share one context".into()));
        }
        let gram = ambient_gram(&members);
        Ok(Self { members, kind, descriptor, linfty_constant, gram, state_gram })
    }

    pub fn members(&self) -> &[TracedMatrix] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ctx(&self) -> &AlgebraContext {
        self.members[0].ctx()
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    /// Certified constant `C` of the upper Khintchine inequality in `L_inf`.
    pub fn linfty_constant(&self) -> Option<f64> {
        self.linfty_constant
    }

    pub fn gram(&self) -> &CMat {
        &self.gram
    }

    pub fn state_gram(&self) -> Option<&CMat> {
        self.state_gram.as_ref()
    }
}

/// Words of length `<= m` over `{1..d}`: vacuum first, then by length, then
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FockBasis {
    pub alphabet: usize,
    pub max_len: usize,
    level_offsets: Vec<usize>,
}

impl FockBasis {
    pub fn new(alphabet: usize, max_len: usize) -> Result<Self> {
        if alphabet == 0 {
            return Err(Error::DomainError("alphabet size must be at least 1".into()));
        }
        let mut level_offsets = Vec::with_capacity(max_len + 2);
        let (mut offset, mut level_size) = (0usize, 1usize);
        for _ in 0..=max_len {
            level_offsets.push(offset);
            offset = offset.checked_add(level_size).ok_or(Error::DimensionOverflow {
                dim: usize::MAX,
                cap: crate::matrix::dim_cap(),
            })?;
            level_size = level_size.saturating_mul(alphabet);
        }
        level_offsets.push(offset);
        check_dim(offset)?;
        Ok(Self { alphabet, max_len, level_offsets })
    }

    /// `D = sum_{k<=m} d^k`.
    pub fn size(&self) -> usize {
        self.level_offsets[self.max_len + 1]
    }

    /// Position of a word (letters in `1..=d`).
    pub fn index_of(&self, word: &[usize]) -> Option<usize> {
        if word.len() > self.max_len || word.iter().any(|&l| l == 0 || l > self.alphabet) {
            return None;
        }
        let within = word.iter().fold(0, |acc, &l| acc * self.alphabet + (l - 1));
        Some(self.level_offsets[word.len()] + within)
    }

    pub fn words(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        let mut level = vec![Vec::new()];
        for _ in 0..self.max_len {
            level = level
                .iter()
                .flat_map(|w: &Vec<usize>| {
                    (1..=self.alphabet).map(move |l| {
                        let mut v = w.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
            out.extend(level.iter().cloned());
        }
        out
    }
}

/// The truncated left creation operator `l_i`: `w -> i w` for `|w| < m`,
/// words of length `m` are sent to zero.
pub fn creation_matrix(d: usize, m: usize, i: usize) -> Result<TracedMatrix> {
    if m == 0 {
        return Err(Error::DomainError("truncation length must be at least 1".into()));
    }
    if i == 0 || i > d {
        return Err(Error::IndexOutOfRange { index: i, len: d });
    }
    let basis = FockBasis::new(d, m)?;
    let size = basis.size();
    let mut entries = CMat::zeros(size, size);
    let one = Complex64::new(1.0, 0.0);
    let mut level_size = 1;
    for len in 0..m {
        let (from, to) = (basis.level_offsets[len], basis.level_offsets[len + 1]);
        for within in 0..level_size {
            // i w has value (i-1) d^len + val(w) on the next level
            entries[(to + (i - 1) * level_size + within, from + within)] = one;
        }
        level_size *= d;
    }
    TracedMatrix::new(AlgebraContext::normalized(size)?, entries)
}

/// Semicircular family `s_i = l_i + l_i^*` on the truncated full Fock space.
///
/// The compression of a free semicircular family to words of length `<= m`
/// does not increase norms, so the `L_inf` Khintchine constant 2 holds at
/// every truncation.
pub fn semicircular_family(d: usize, m: usize) -> Result<OperatorFamily> {
    if d == 0 {
        return Err(Error::DomainError("family size must be at least 1".into()));
    }
    let members = (1..=d)
        .map(|i| {
            let l = creation_matrix(d, m, i)?;
            l.add(&l.adjoint())
        })
        .collect::<Result<Vec<_>>>()?;
    let state_gram = Some(vacuum_gram(&members));
    OperatorFamily::assemble(
        members,
        FamilyKind::Fock,
        FamilyDescriptor::Fock { d, m }.to_string(),
        Some(2.0),
        state_gram,
    )
}

/// `d` independent GUE matrices of size `N`, normalized so the limiting
/// spectrum is `[-2, 2]`.
pub fn gue_family(d: usize, n: usize, seed: u64) -> Result<OperatorFamily> {
    if d == 0 || n == 0 {
        return Err(Error::DomainError("GUE family needs d >= 1 and N >= 1".into()));
    }
    check_dim(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag_sd = (1.0 / n as f64).sqrt();
    let off_sd = (0.5 / n as f64).sqrt();
    let ctx = AlgebraContext::normalized(n)?;
    let members = (0..d)
        .map(|_| {
            let mut g = CMat::zeros(n, n);
            for r in 0..n {
                let v: f64 = StandardNormal.sample(&mut rng);
                g[(r, r)] = Complex64::new(diag_sd * v, 0.0);
                for c in (r + 1)..n {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    let z = Complex64::new(off_sd * re, off_sd * im);
                    g[(r, c)] = z;
                    g[(c, r)] = z.conj();
                }
            }
            TracedMatrix::new(ctx, g)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorFamily::assemble(
        members,
        FamilyKind::Gue,
        FamilyDescriptor::Gue { d, n, seed }.to_string(),
        None,
        None,
    )
}

/// Sign of coordinate `i` (0-based) in the sign vector with index `k`.
pub fn rademacher_sign(k: usize, i: usize) -> f64 {
    if (k >> i) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Independent Rademacher variables as diagonal `+-1` matrices over all
/// sign vectors in `{-1, 1}^d`, with the uniform probability as trace.
pub fn rademacher_family(d: usize) -> Result<OperatorFamily> {
    if d == 0 {
        return Err(Error::DomainError("family size must be at least 1".into()));
    }
    if d > RADEMACHER_CAP {
        return Err(Error::DimensionOverflow { dim: 1usize << d.min(63), cap: 1 << RADEMACHER_CAP });
    }
    let size = 1usize << d;
    let weight = 1.0 / size as f64;
    let members = (0..d)
        .map(|i| {
            let diag: Vec<f64> = (0..size).map(|k| rademacher_sign(k, i)).collect();
            TracedMatrix::from_real_diag(weight, &diag)
        })
        .collect::<Result<Vec<_>>>()?;
    OperatorFamily::assemble(
        members,
        FamilyKind::Rademacher,
        FamilyDescriptor::Rademacher { d }.to_string(),
        None,
        None,
    )
}

/// `delta_i = e_{i,0} + e_{0,i}` in `M_{d+1}`, normalized trace.
///
/// `sum delta_i (x) x_i` is the block matrix `[[0, R], [C, 0]]` with `R` the
/// row and `C` the column of the `x_i`, so the `L_inf` constant is 1.
pub fn rc_family(d: usize) -> Result<OperatorFamily> {
    if d == 0 {
        return Err(Error::DomainError("family size must be at least 1".into()));
    }
    let ctx = AlgebraContext::normalized(d + 1)?;
    let members = (1..=d)
        .map(|i| TracedMatrix::matrix_unit(ctx, i, 0)?.add(&TracedMatrix::matrix_unit(ctx, 0, i)?))
        .collect::<Result<Vec<_>>>()?;
    OperatorFamily::assemble(
        members,
        FamilyKind::Rc,
        FamilyDescriptor::Rc { d }.to_string(),
        Some(1.0),
        None,
    )
}

/// Parsed family descriptor such as `fock:d=3,m=4` or `gue:d=3,N=256,seed=7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyDescriptor {
    Fock { d: usize, m: usize },
    Gue { d: usize, n: usize, seed: u64 },
    Rademacher { d: usize },
    Rc { d: usize },
}

impl FamilyDescriptor {
    pub fn build(&self) -> Result<OperatorFamily> {
        match *self {
            Self::Fock { d, m } => semicircular_family(d, m),
            Self::Gue { d, n, seed } => gue_family(d, n, seed),
            Self::Rademacher { d } => rademacher_family(d),
            Self::Rc { d } => rc_family(d),
        }
    }

    /// Number of members.
    pub fn len(&self) -> usize {
        match *self {
            Self::Fock { d, .. } | Self::Gue { d, .. } | Self::Rademacher { d } | Self::Rc { d } => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matrix size of the family algebra, saturating on overflow.
    pub fn algebra_dim(&self) -> usize {
        match *self {
            Self::Fock { d, m } => {
                let mut total = 0usize;
                let mut level = 1usize;
                for _ in 0..=m {
                    total = total.saturating_add(level);
                    level = level.saturating_mul(d);
                }
                total
            }
            Self::Gue { n, .. } => n,
            Self::Rademacher { d } => 1usize.checked_shl(d as u32).unwrap_or(usize::MAX),
            Self::Rc { d } => d + 1,
        }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            Self::Fock { .. } => FamilyKind::Fock,
            Self::Gue { .. } => FamilyKind::Gue,
            Self::Rademacher { .. } => FamilyKind::Rademacher,
            Self::Rc { .. } => FamilyKind::Rc,
        }
    }
}

impl fmt::Display for FamilyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fock { d, m } => write!(f, "fock:d={d},m={m}"),
            Self::Gue { d, n, seed } => write!(f, "gue:d={d},N={n},seed={seed}"),
            Self::Rademacher { d } => write!(f, "rademacher:d={d}"),
            Self::Rc { d } => write!(f, "rc:d={d}"),
        }
    }
}

impl FromStr for FamilyDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidDescriptor(s.to_owned());
        let (kind, params) = s.trim().split_once(':').ok_or_else(bad)?;
        let params = parse_params(params).ok_or_else(bad)?;
        let allowed: &[&str] = match kind {
            "fock" => &["d", "m"],
            "gue" => &["d", "N", "seed"],
            "rademacher" | "rc" => &["d"],
            _ => return Err(bad()),
        };
        if params.iter().any(|(k, _)| !allowed.contains(&k.as_str())) {
            return Err(bad());
        }
        let int = |key: &str| -> Result<u64> {
            let v = params.iter().find(|(k, _)| k == key).map(|(_, v)| *v).ok_or_else(bad)?;
            if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
                return Err(bad());
            }
            Ok(v as u64)
        };
        Ok(match kind {
            "fock" => Self::Fock { d: int("d")? as usize, m: int("m")? as usize },
            "gue" => Self::Gue { d: int("d")? as usize, n: int("N")? as usize, seed: int("seed")? },
            "rademacher" => Self::Rademacher { d: int("d")? as usize },
            _ => Self::Rc { d: int("d")? as usize },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fock_basis_order_and_size() {
        let b = FockBasis::new(2, 2).unwrap();
        assert_eq!(b.size(), 7);
        let words = b.words();
        assert_eq!(
            words,
            vec![vec![], vec![1], vec![2], vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]
        );
        for (k, w) in words.iter().enumerate() {
            assert_eq!(b.index_of(w), Some(k));
        }
        assert_eq!(b.index_of(&[1, 1, 1]), None);
        assert_eq!(b.index_of(&[3]), None);
    }

    #[test]
    fn creation_acts_by_prepending() {
        let b = FockBasis::new(2, 2).unwrap();
        let l1 = creation_matrix(2, 2, 1).unwrap();
        let image = |w: &[usize]| -> Vec<usize> {
            let col = b.index_of(w).unwrap();
            (0..b.size()).filter(|&r| l1.entries()[(r, col)].norm() > 0.0).collect()
        };
        assert_eq!(image(&[]), vec![b.index_of(&[1]).unwrap()]);
        assert_eq!(image(&[2]), vec![b.index_of(&[1, 2]).unwrap()]);
        assert!(image(&[1, 1]).is_empty());

        let l2 = creation_matrix(2, 2, 2).unwrap();
        assert!(l1.adjoint().matmul(&l2).unwrap().max_abs() == 0.0);
        assert_relative_eq!(l1.norm_inf().unwrap(), 1.0, epsilon = 1e-12);

        // l^* l = 1 - projection onto the top level
        let mut expected = vec![1.0; 7];
        for v in &mut expected[3..] {
            *v = 0.0;
        }
        let ll = l1.adjoint().matmul(&l1).unwrap();
        let diag = TracedMatrix::from_real_diag(1.0 / 7.0, &expected).unwrap();
        assert_eq!(ll.max_abs_diff(&diag), 0.0);

        assert!(matches!(creation_matrix(2, 2, 3), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(creation_matrix(2, 2, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(creation_matrix(8, 8, 1), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn single_semicircular_is_tridiagonal() {
        let fam = semicircular_family(1, 2).unwrap();
        let s = &fam.members()[0];
        let mut expected = CMat::zeros(3, 3);
        for k in 0..2 {
            expected[(k, k + 1)] = Complex64::new(1.0, 0.0);
            expected[(k + 1, k)] = Complex64::new(1.0, 0.0);
        }
        assert_eq!(s.entries(), &expected);
        let angle = std::f64::consts::PI / 4.0;
        assert_relative_eq!(s.norm_inf().unwrap(), 2.0 * angle.cos(), epsilon = 1e-12);
        assert_eq!(fam.linfty_constant(), Some(2.0));
    }

    #[test]
    fn vacuum_moments_are_catalan() {
        let fam = semicircular_family(2, 3).unwrap();
        let s = fam.members()[0].entries();
        let mut power = CMat::identity(s.nrows(), s.ncols());
        let mut moments = Vec::new();
        for _ in 0..6 {
            power = &power * s;
            moments.push(power[(0, 0)]);
        }
        assert!(moments[0].norm() < 1e-14 && moments[2].norm() < 1e-14 && moments[4].norm() < 1e-14);
        for (m, c) in [moments[1], moments[3], moments[5]].iter().zip([1.0, 2.0, 5.0]) {
            assert!((m - Complex64::new(c, 0.0)).norm() < 1e-12);
        }
        let sg = fam.state_gram().unwrap();
        assert!((sg - CMat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn gue_is_deterministic_per_seed() {
        let a = gue_family(2, 16, 7).unwrap();
        let b = gue_family(2, 16, 7).unwrap();
        let c = gue_family(2, 16, 8).unwrap();
        for (x, y) in a.members().iter().zip(b.members()) {
            assert_eq!(x, y);
        }
        assert_ne!(a.members()[0], c.members()[0]);
        assert!(a.members().iter().all(TracedMatrix::is_hermitian));
        assert_eq!(a.descriptor(), "gue:d=2,N=16,seed=7");
        assert_eq!(a.linfty_constant(), None);
    }

    #[test]
    fn gue_second_moment_and_gram() {
        let n = 200;
        let fam = gue_family(3, n, 11).unwrap();
        let g = fam.gram();
        let mean_diag: f64 = (0..3).map(|i| g[(i, i)].re).sum::<f64>() / 3.0;
        // E tau(g^2) = 1, fluctuations O(1/N)
        assert!((mean_diag - 1.0).abs() < 10.0 / n as f64, "{mean_diag}");
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(g[(i, j)].norm() < 10.0 / n as f64);
                }
            }
        }
    }

    #[test]
    fn rademacher_basics() {
        let fam = rademacher_family(1).unwrap();
        let e = &fam.members()[0];
        assert_eq!(e, &TracedMatrix::from_real_diag(0.5, &[1.0, -1.0]).unwrap());
        assert_eq!(e.trace().re, 0.0);

        let fam = rademacher_family(4).unwrap();
        for e in fam.members() {
            let sq = e.matmul(e).unwrap();
            assert_eq!(sq, TracedMatrix::identity(*e.ctx()));
        }
        assert_eq!(fam.gram(), &CMat::identity(4, 4));
        assert!(matches!(rademacher_family(13), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn rc_basics() {
        let fam = rc_family(1).unwrap();
        let expected = TracedMatrix::new(
            AlgebraContext::normalized(2).unwrap(),
            CMat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0].map(|v| Complex64::new(v, 0.0))),
        )
        .unwrap();
        assert_eq!(fam.members()[0], expected);
        assert_relative_eq!(expected.norm_inf().unwrap(), 1.0, epsilon = 1e-14);

        let fam = rc_family(4).unwrap();
        let g = fam.gram();
        assert!((g - CMat::identity(4, 4) * Complex64::new(0.4, 0.0)).norm() < 1e-14);
        let m = fam.members();
        assert_relative_eq!(m[0].matmul(&m[2]).unwrap().norm_inf().unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn descriptors_round_trip() {
        for s in ["fock:d=3,m=4", "gue:d=3,N=256,seed=7", "rademacher:d=8", "rc:d=5"] {
            let d: FamilyDescriptor = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert_eq!("fock:d=3,m=4".parse::<FamilyDescriptor>().unwrap().algebra_dim(), 121);
        for bad in ["fock:d=3", "gue:d=3,N=256", "rc:d=1.5", "heis:d=2", "rc:d=2,m=1", "rc"] {
            assert!(bad.parse::<FamilyDescriptor>().is_err(), "{bad}");
        }
    }
}
