use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Column order of the CSV rendering of a [`VerificationReport`].
pub const CSV_HEADER: [&str; 10] =
    ["experiment", "family", "dims", "seed", "lhs", "rhs", "ratio", "bound", "pass", "tol"];

/// Outcome of one inequality check.
///
/// With a certified `bound`, `pass` means `lhs <= bound * rhs * (1 + tol)` at
/// every checked point; `lhs`/`rhs` then record the worst point. Without a
/// bound, `pass` only records that the ratio is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub experiment: String,
    pub family: String,
    pub dims: String,
    pub seed: Option<u64>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub bound: Option<f64>,
    pub pass: bool,
    pub tol: f64,
    /// Number of individual comparisons behind this report.
    pub checks: usize,
    pub violations: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// `lhs / rhs` with `0 / 0 = 0`.
pub fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    }
}

impl VerificationReport {
    pub fn new(experiment: impl Into<String>, tol: f64) -> Self {
        Self {
            experiment: experiment.into(),
            family: String::new(),
            dims: String::new(),
            seed: None,
            lhs: 0.0,
            rhs: 0.0,
            ratio: 0.0,
            bound: None,
            pass: true,
            tol,
            checks: 0,
            violations: 0,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_family(mut self, family: impl Into<String>) -> Self {
        self.family = family.into();
        self
    }

    pub fn with_dims(mut self, dims: impl Into<String>) -> Self {
        self.dims = dims.into();
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn detail(&mut self, key: &str, value: f64) {
        self.details.insert(key.to_owned(), value);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Finalizes a single-comparison report against a certified bound.
    pub fn bounded(mut self, lhs: f64, rhs: f64, bound: f64) -> Self {
        self.lhs = lhs;
        self.rhs = rhs;
        self.ratio = ratio_of(lhs, rhs);
        self.bound = Some(bound);
        self.checks = 1;
        let ok = lhs <= bound * rhs * (1.0 + self.tol);
        self.violations = usize::from(!ok);
        self.pass = ok;
        if lhs == 0.0 && rhs == 0.0 {
            self.note("degenerate input: 0/0 ratio reported as 0");
        }
        self
    }

    /// Finalizes a report that carries no certified bound.
    pub fn ratio_only(mut self, lhs: f64, rhs: f64) -> Self {
        self.lhs = lhs;
        self.rhs = rhs;
        self.ratio = ratio_of(lhs, rhs);
        self.bound = None;
        self.checks = 1;
        self.pass = self.ratio.is_finite();
        self.violations = usize::from(!self.pass);
        if lhs == 0.0 && rhs == 0.0 {
            self.note("degenerate input: 0/0 ratio reported as 0");
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Fields in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.experiment.clone(),
            self.family.clone(),
            self.dims.clone(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            self.lhs.to_string(),
            self.rhs.to_string(),
            self.ratio.to_string(),
            self.bound.map(|b| b.to_string()).unwrap_or_default(),
            self.pass.to_string(),
            self.tol.to_string(),
        ]
    }
}
