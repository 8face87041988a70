//! TOML experiment configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use ncki_core::matrix::dim_cap;
use ncki_core::models::RADEMACHER_CAP;
use ncki_core::{CoefficientDistribution, FamilyDescriptor, OrliczFunction};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LemmaDist,
    UpperKi,
    LowerKi,
    MomentChain,
    Rademacher,
    Bg,
    OrliczIndices,
    GueSweep,
    FkFuzz,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LemmaDist => "lemma-dist",
            Self::UpperKi => "upper-ki",
            Self::LowerKi => "lower-ki",
            Self::MomentChain => "moment-chain",
            Self::Rademacher => "rademacher",
            Self::Bg => "bg",
            Self::OrliczIndices => "orlicz-indices",
            Self::GueSweep => "gue-sweep",
            Self::FkFuzz => "fk-fuzz",
        }
    }

    pub fn is_randomized(self) -> bool {
        self != Self::OrliczIndices
    }

    fn needs_family(self) -> bool {
        matches!(self, Self::LemmaDist | Self::UpperKi | Self::LowerKi | Self::MomentChain)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Exhaustive,
    Montecarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BgMode {
    #[default]
    Deterministic,
    SignAverage,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    /// Matrix size of each coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Number of coefficients; defaults to the family size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default)]
    pub distribution: CoefficientDistribution,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Schatten exponents (`inf` allowed).
    #[serde(default)]
    pub p: Vec<f64>,
    /// Exponents for the Rademacher comparison.
    #[serde(default)]
    pub q: Vec<f64>,
    /// Orlicz function descriptors such as `power:p=2`.
    #[serde(default)]
    pub phi: Vec<String>,
    /// Also run the pointwise rearrangement comparison (upper-ki).
    #[serde(default)]
    pub rearrangement: bool,
    /// Extra levels for lemma-dist; breakpoints are always included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub bg_variant: BgMode,
    /// Matrix sizes `N` for gue-sweep.
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_trials() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_samples() -> usize {
    1000
}

impl ExperimentConfig {
    /// A config with every default for `kind` filled in.
    pub fn new(kind: ExperimentKind) -> Self {
        let mut c = Self::blank(kind);
        c.fill_defaults();
        c
    }

    /// A config with only the kind-independent defaults; call
    /// [`finalize`](Self::finalize) after setting fields.
    pub fn blank(kind: ExperimentKind) -> Self {
        Self {
            experiment: kind,
            family: None,
            seed: None,
            trials: default_trials(),
            tolerance: default_tolerance(),
            jobs: None,
            p: Vec::new(),
            q: Vec::new(),
            phi: Vec::new(),
            rearrangement: false,
            t_grid: None,
            mode: Mode::default(),
            samples: default_samples(),
            bg_variant: BgMode::default(),
            sizes: Vec::new(),
            coefficients: CoefficientSpec::default(),
            output: OutputSpec::default(),
        }
    }

    fn fill_defaults(&mut self) {
        use ExperimentKind::*;
        let kind = self.experiment;
        if self.p.is_empty() {
            self.p = match kind {
                UpperKi => vec![f64::INFINITY],
                LowerKi => vec![2.0, f64::INFINITY],
                _ => Vec::new(),
            };
        }
        if self.q.is_empty() && kind == Rademacher {
            self.q = vec![2.0, 4.0];
        }
        if self.phi.is_empty() {
            self.phi = match kind {
                MomentChain => vec!["power:p=1.5".into(), "power:p=3".into(), "powerlog:p=2,a=1".into()],
                Bg | OrliczIndices => vec!["power:p=2".into()],
                _ => Vec::new(),
            };
        }
        if self.sizes.is_empty() && kind == GueSweep {
            self.sizes = vec![32, 64, 128, 256];
        }
        if self.coefficients.n.is_none() {
            self.coefficients.n = Some(match kind {
                FkFuzz => 4,
                Bg => 8,
                _ => 2,
            });
        }
        if self.coefficients.count.is_none() {
            let family_len = self.family_descriptor().ok().flatten().map(|f| f.len());
            self.coefficients.count = Some(match kind {
                FkFuzz => 2,
                _ => family_len.unwrap_or(3),
            });
        }
    }

    pub fn family_descriptor(&self) -> Result<Option<FamilyDescriptor>, ConfigError> {
        self.family
            .as_deref()
            .map(|f| FamilyDescriptor::from_str(f).map_err(|e| invalid(format!("family: {e}"))))
            .transpose()
    }

    pub fn orlicz_functions(&self) -> Result<Vec<OrliczFunction>, ConfigError> {
        self.phi
            .iter()
            .map(|s| OrliczFunction::from_str(s).map_err(|e| invalid(format!("phi {s:?}: {e}"))))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.coefficients.n.unwrap_or(2)
    }

    pub fn count(&self) -> usize {
        self.coefficients.count.unwrap_or(3)
    }

    /// Fills kind-dependent defaults and checks every constraint.
    pub fn finalize(mut self) -> Result<Self, ConfigError> {
        self.fill_defaults();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use ExperimentKind::*;
        let kind = self.experiment;
        if kind.is_randomized() && self.seed.is_none() {
            return Err(invalid(format!("{kind} draws random coefficients and needs a seed")));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.tolerance >= 0.0) || !self.tolerance.is_finite() {
            return Err(invalid(format!("tolerance must be finite and non-negative, got {}", self.tolerance)));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be at least 1"));
        }
        let (n, count) = (self.n(), self.count());
        if n == 0 || count == 0 {
            return Err(invalid("coefficients.n and coefficients.count must be at least 1"));
        }

        let family = self.family_descriptor()?;
        if kind.needs_family() && family.is_none() {
            return Err(invalid(format!("{kind} needs a family descriptor")));
        }
        if let Some(f) = &family {
            if count > f.len() {
                return Err(invalid(format!("coefficients.count = {count} exceeds family size {}", f.len())));
            }
            let total = f.algebra_dim().saturating_mul(n);
            if total > dim_cap() {
                return Err(invalid(format!("tensor dimension {total} exceeds the cap {}", dim_cap())));
            }
            let certified = matches!(f, FamilyDescriptor::Fock { .. } | FamilyDescriptor::Rc { .. });
            if matches!(kind, MomentChain | LemmaDist | UpperKi) && !certified {
                return Err(invalid(format!("{kind} needs a family with a certified constant (fock or rc)")));
            }
        }

        let bad_p = |p: f64, lo: f64| !(p >= lo) || p.is_nan();
        match kind {
            UpperKi => {
                if let Some(p) = self.p.iter().find(|p| bad_p(**p, 1.0)) {
                    return Err(invalid(format!("p must be in [1, inf], got {p}")));
                }
            }
            LowerKi => {
                if let Some(p) = self.p.iter().find(|p| bad_p(**p, 2.0)) {
                    return Err(invalid(format!("lower-ki needs p in [2, inf], got {p}")));
                }
            }
            Rademacher => {
                if let Some(q) = self.q.iter().find(|q| bad_p(**q, 1.0) || q.is_infinite()) {
                    return Err(invalid(format!("q must be finite and >= 1, got {q}")));
                }
                if self.mode == Mode::Exhaustive && count > RADEMACHER_CAP {
                    return Err(invalid(format!(
                        "exhaustive Rademacher averages enumerate 2^{count} signs; the cap is d <= {RADEMACHER_CAP}"
                    )));
                }
                if self.mode == Mode::Montecarlo && self.samples == 0 {
                    return Err(invalid("samples must be at least 1"));
                }
            }
            Bg => {
                if !n.is_power_of_two() || n < 2 {
                    return Err(invalid(format!("bg uses dyadic filtrations; coefficients.n = {n} is not a power of two")));
                }
                if self.bg_variant == BgMode::SignAverage && n.ilog2() as usize > RADEMACHER_CAP {
                    return Err(invalid("too many martingale differences for a sign average"));
                }
            }
            GueSweep => {
                if let Some(&s) = self.sizes.iter().find(|&&s| s == 0 || s.saturating_mul(n) > dim_cap()) {
                    return Err(invalid(format!("gue size {s} is zero or exceeds the cap")));
                }
            }
            _ => {}
        }
        if let Some(grid) = &self.t_grid {
            if let Some(t) = grid.iter().find(|t| !(**t >= 0.0)) {
                return Err(invalid(format!("t_grid levels must be non-negative, got {t}")));
            }
        }
        self.orlicz_functions()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a config document, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_owned(),
    })?;
    raw.finalize()
}
