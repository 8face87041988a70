//! Seeded random coefficient sequences and per-trial seed derivation.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{AlgebraContext, TracedMatrix};

/// Seed of trial `index` in a run seeded with `base` (SplitMix64 finalizer),
/// so trials can run in any order and still reproduce.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientDistribution {
    /// Independent standard complex Gaussian entries.
    #[default]
    Gaussian,
    /// Gaussian direction rescaled to a uniform operator norm in `[0, 1]`.
    UnitBall,
    /// A Gaussian multiple of a uniformly chosen matrix unit.
    MatrixUnits,
}

impl fmt::Display for CoefficientDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::UnitBall => "unit-ball",
            Self::MatrixUnits => "matrix-units",
        })
    }
}

impl FromStr for CoefficientDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "unit-ball" => Ok(Self::UnitBall),
            "matrix-units" => Ok(Self::MatrixUnits),
            other => Err(Error::InvalidDescriptor(format!("unknown distribution {other:?}"))),
        }
    }
}

fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One random element of `M_n` with the normalized trace.
pub fn sample_matrix(dist: CoefficientDistribution, n: usize, rng: &mut impl Rng) -> Result<TracedMatrix> {
    let ctx = AlgebraContext::normalized(n)?;
    let entries = match dist {
        CoefficientDistribution::Gaussian => DMatrix::from_fn(n, n, |_, _| complex_normal(rng)),
        CoefficientDistribution::UnitBall => {
            let g = DMatrix::from_fn(n, n, |_, _| complex_normal(rng));
            let norm = crate::matrix::singular_values_of(&g)?.first().copied().unwrap_or(0.0);
            let radius: f64 = rng.random();
            if norm > 0.0 {
                g * Complex64::new(radius / norm, 0.0)
            } else {
                g
            }
        }
        CoefficientDistribution::MatrixUnits => {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            let mut m = DMatrix::zeros(n, n);
            m[(a, b)] = complex_normal(rng);
            m
        }
    };
    TracedMatrix::new(ctx, entries)
}

pub fn sample_coefficients(
    dist: CoefficientDistribution,
    n: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TracedMatrix>> {
    (0..count).map(|_| sample_matrix(dist, n, rng)).collect()
}

/// Orthogonal projection onto the span of the first `k` columns of a random
/// unitary, `k` uniform in `0..=n`.
pub fn sample_projection(n: usize, rng: &mut impl Rng) -> Result<TracedMatrix> {
    let g = DMatrix::from_fn(n, n, |_, _| complex_normal(rng));
    let q = g.qr().q();
    let k = rng.random_range(0..=n);
    let basis = q.columns(0, k).into_owned();
    TracedMatrix::new(AlgebraContext::normalized(n)?, &basis * basis.adjoint())
}
