//! Fixtures shared by the benchmarks in `benches/`.

use ncki_core::sampling::trial_rng;
use ncki_core::{sample_coefficients, CoefficientDistribution, TracedMatrix};

/// `count` Gaussian coefficients in `M_n`, fixed per `(n, count)`.
pub fn coefficients(n: usize, count: usize) -> Vec<TracedMatrix> {
    sample_coefficients(CoefficientDistribution::Gaussian, n, count, &mut trial_rng(0xbe9c, (n * 64 + count) as u64))
        .expect("fixture sizes are within the cap")
}
