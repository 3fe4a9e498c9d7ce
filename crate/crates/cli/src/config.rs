//! Experiment configuration: a TOML file, `schema_version = 1`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qsens_core::floquet::{det, Boundary, BuildOptions, KickFamily, KickModel, TrigPolynomial, CAT_MATRIX};
use qsens_core::growth::{FitOptions, DEFAULT_LEAKAGE_BUDGET};
use qsens_core::lattice::{BlochSector, LatticeSpec};
use qsens_core::perturbation::{PerturbationSpec, DEFAULT_FD_STEP};

pub const SCHEMA_VERSION: u32 = 1;
const MAX_CUTOFF: usize = 512;

/// A rejected configuration, with the key path at fault.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn reject<T>(path: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { path: path.into(), message: message.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub model: ModelConfig,
    pub lattice: LatticeConfig,
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Free,
    Position,
    Cat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryName {
    Absorbing,
    Periodic,
}

impl From<BoundaryName> for Boundary {
    fn from(b: BoundaryName) -> Self {
        match b {
            BoundaryName::Absorbing => Boundary::Absorbing,
            BoundaryName::Periodic => Boundary::Periodic,
        }
    }
}

/// One Fourier coefficient `c_m` of the kick potential `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub mode: [i64; 2],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: FamilyName,
    /// Resonance order `m` with `tau = 4 pi m`. Default when `tau` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Position-kick potential; `cos x1 + cos x2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<FourierTerm>>,
    /// Cat matrix; `[[1,1],[1,2]]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[i64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub cutoff: usize,
    /// Must equal the fractional part of `perturbation.p0` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default)]
    pub q0: [f64; 2],
    #[serde(default)]
    pub p0: [f64; 2],
    #[serde(default)]
    pub v1: [f64; 2],
    #[serde(default)]
    pub v2: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
    #[serde(default)]
    pub richardson: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_budget")]
    pub leakage_budget: f64,
    #[serde(default)]
    pub n_lo: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_hi: Option<usize>,
    /// Thresholds `M` of the finite-horizon sensitivity test.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    /// Horizon `T` of the sensitivity test.
    #[serde(default)]
    pub horizon: usize,
}

fn default_steps() -> usize {
    20
}

fn default_budget() -> f64 {
    DEFAULT_LEAKAGE_BUDGET
}

fn default_thresholds() -> Vec<f64> {
    vec![10.0, 100.0]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            leakage_budget: default_budget(),
            n_lo: 0,
            n_hi: None,
            thresholds: default_thresholds(),
            horizon: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out-dir` overrides it.
    #[serde(default = "default_dir")]
    pub dir: String,
    /// File stem; the config name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_dir() -> String {
    "out".into()
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), prefix: None, plot: true }
    }
}

/// Overrides for the `spectrum` subcommand, whose dense eigensolver needs a
/// small window and sector-preserving dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryName>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Reconstruction is compared with direct evolution for `n <= max_n`.
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v1: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v2: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
}

fn default_bins() -> usize {
    8
}

fn default_max_n() -> usize {
    20
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            cutoff: None,
            boundary: None,
            bins: default_bins(),
            max_n: default_max_n(),
            v1: None,
            v2: None,
            k_window: None,
            fd_step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "model.alpha")]
    Alpha,
    #[serde(rename = "model.tau")]
    Tau,
    #[serde(rename = "lattice.cutoff")]
    Cutoff,
    #[serde(rename = "perturbation.fd_step")]
    FdStep,
}

impl SweepParameter {
    pub fn key(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "model.alpha",
            SweepParameter::Tau => "model.tau",
            SweepParameter::Cutoff => "lattice.cutoff",
            SweepParameter::FdStep => "perturbation.fd_step",
        }
    }

    /// Short form used in file names.
    pub fn short(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Tau => "tau",
            SweepParameter::Cutoff => "cutoff",
            SweepParameter::FdStep => "fd_step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn finite2(path: &str, v: [f64; 2]) -> Result<(), ConfigError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        reject(path, format!("components must be finite, got {v:?}"))
    }
}

impl ExperimentConfig {
    /// Parses TOML; type errors carry the key path.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError { path: "<document>".into(), message: e.to_string().trim().to_string() })?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError {
                path: if path == "." { "<document>".into() } else { path },
                message: e.into_inner().message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML form, used for the echo hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn prefix(&self) -> &str {
        self.output.prefix.as_deref().unwrap_or(&self.name)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return reject(
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return reject("name", "must be a nonempty identifier of [A-Za-z0-9_-]");
        }
        if let Some(p) = &self.output.prefix {
            if p.is_empty() || p.contains(['/', '\\']) {
                return reject("output.prefix", "must be a nonempty file stem");
            }
        }
        self.validate_model()?;
        self.validate_lattice()?;
        self.validate_perturbation()?;
        self.validate_run()?;
        if let Some(s) = &self.spectrum {
            if s.bins < 8 {
                return reject("spectrum.bins", format!("needs at least 8 bins, got {}", s.bins));
            }
            if s.cutoff == Some(0) {
                return reject("spectrum.cutoff", "must be at least 1");
            }
            for (key, v) in [("spectrum.v1", s.v1), ("spectrum.v2", s.v2)] {
                if let Some(v) = v {
                    finite2(key, v)?;
                }
            }
            if s.k_window == Some(0) {
                return reject("spectrum.k_window", "must be at least 1");
            }
        }
        for (i, sw) in self.sweep.iter().enumerate() {
            if sw.values.is_empty() {
                return reject(format!("sweep[{i}].values"), "must not be empty");
            }
            for (j, v) in sw.values.iter().enumerate() {
                let path = format!("sweep[{i}].values[{j}]");
                let point = self
                    .with_parameter(sw.parameter, *v)
                    .map_err(|e| ConfigError { path: path.clone(), message: e.message })?;
                point
                    .validate()
                    .map_err(|e| ConfigError { path: path.clone(), message: format!("{} ({})", e.message, e.path) })?;
            }
        }
        Ok(())
    }

    fn validate_model(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        match (m.resonance, m.tau) {
            (Some(_), Some(_)) => return reject("model.tau", "give either tau or resonance, not both"),
            (Some(0), None) => return reject("model.resonance", "resonance order must be at least 1"),
            (None, Some(t)) if !(t.is_finite() && t > 0.0) => {
                return reject("model.tau", format!("kick period must be positive, got {t}"))
            }
            _ => {}
        }
        let present = |set: bool, key: &str| {
            if set {
                reject(format!("model.{key}"), format!("not used by the {:?} family", m.family).to_lowercase())
            } else {
                Ok(())
            }
        };
        match m.family {
            FamilyName::Free => {
                present(m.alpha.is_some(), "alpha")?;
                present(m.g.is_some(), "g")?;
                present(m.matrix.is_some(), "matrix")?;
                present(m.boundary.is_some(), "boundary")?;
            }
            FamilyName::Position => {
                present(m.matrix.is_some(), "matrix")?;
                match m.alpha {
                    None => return reject("model.alpha", "required for position kicks"),
                    Some(a) if !a.is_finite() => return reject("model.alpha", "must be finite"),
                    _ => {}
                }
                if let Some(g) = &m.g {
                    if g.is_empty() {
                        return reject("model.g", "needs at least one Fourier term");
                    }
                    if g.iter().any(|t| !(t.re.is_finite() && t.im.is_finite())) {
                        return reject("model.g", "coefficients must be finite");
                    }
                    if let Err(e) = self.trig_polynomial().validate_real() {
                        return reject("model.g", e.to_string());
                    }
                }
            }
            FamilyName::Cat => {
                present(m.alpha.is_some(), "alpha")?;
                present(m.g.is_some(), "g")?;
                let mat = m.matrix.unwrap_or(CAT_MATRIX);
                if det(&mat) != 1 {
                    return reject("model.matrix", format!("determinant must be 1, got {}", det(&mat)));
                }
            }
        }
        Ok(())
    }

    fn validate_lattice(&self) -> Result<(), ConfigError> {
        let k = self.lattice.cutoff;
        if !(1..=MAX_CUTOFF).contains(&k) {
            return reject("lattice.cutoff", format!("must lie in [1, {MAX_CUTOFF}], got {k}"));
        }
        if let Some(beta) = self.lattice.beta {
            finite2("lattice.beta", beta)?;
            if beta.iter().any(|b| !(0.0..1.0).contains(b)) {
                return reject("lattice.beta", format!("components must lie in [0, 1), got {beta:?}"));
            }
            let expect = self.sector().map_err(|e| ConfigError { path: "perturbation.p0".into(), message: e })?.beta;
            if beta != expect {
                return reject(
                    "lattice.beta",
                    format!("{beta:?} differs from the fractional part {expect:?} of perturbation.p0"),
                );
            }
        }
        Ok(())
    }

    fn validate_perturbation(&self) -> Result<(), ConfigError> {
        let p = &self.perturbation;
        for (key, v) in [("q0", p.q0), ("p0", p.p0), ("v1", p.v1), ("v2", p.v2)] {
            finite2(&format!("perturbation.{key}"), v)?;
        }
        if p.v1.iter().chain(&p.v2).all(|x| *x == 0.0) {
            return reject("perturbation.v2", "direction (v1, v2) must be nonzero");
        }
        if let Some(w) = p.k_window {
            if w == 0 || w > self.lattice.cutoff {
                return reject(
                    "perturbation.k_window",
                    format!("must lie in [1, lattice.cutoff = {}], got {w}", self.lattice.cutoff),
                );
            }
        }
        if let Some(h) = p.fd_step {
            if !(h.is_finite() && h > 0.0 && h < 0.125) {
                return reject("perturbation.fd_step", format!("must lie in (0, 1/8), got {h}"));
            }
        }
        self.perturbation_spec()
            .and_then(|s| s.validate())
            .map_err(|e| ConfigError { path: "perturbation".into(), message: e.to_string() })
    }

    fn validate_run(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if r.steps < 2 {
            return reject("run.steps", format!("need at least 2 steps, got {}", r.steps));
        }
        if !(r.leakage_budget > 0.0 && r.leakage_budget < 1.0) {
            return reject("run.leakage_budget", format!("must lie in (0, 1), got {}", r.leakage_budget));
        }
        if r.n_lo >= r.steps {
            return reject("run.n_lo", format!("must be below run.steps = {}", r.steps));
        }
        if let Some(hi) = r.n_hi {
            if hi <= r.n_lo || hi > r.steps {
                return reject("run.n_hi", format!("must lie in (run.n_lo, run.steps], got {hi}"));
            }
        }
        if r.thresholds.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return reject("run.thresholds", "thresholds must be positive");
        }
        if r.horizon >= r.steps {
            return reject("run.horizon", format!("must be below run.steps = {}", r.steps));
        }
        Ok(())
    }

    /// The same experiment with one parameter replaced.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        match parameter {
            SweepParameter::Alpha => {
                if c.model.family != FamilyName::Position {
                    return reject("model.alpha", "only position kicks have alpha");
                }
                c.model.alpha = Some(value);
            }
            SweepParameter::Tau => {
                c.model.resonance = None;
                c.model.tau = Some(value);
            }
            SweepParameter::Cutoff => {
                if !(value.fract() == 0.0 && value >= 1.0) {
                    return reject("lattice.cutoff", format!("must be a positive integer, got {value}"));
                }
                c.lattice.cutoff = value as usize;
            }
            SweepParameter::FdStep => c.perturbation.fd_step = Some(value),
        }
        c.sweep.clear();
        Ok(c)
    }

    fn trig_polynomial(&self) -> TrigPolynomial {
        match &self.model.g {
            None => TrigPolynomial::cos_sum(),
            Some(terms) => {
                TrigPolynomial { terms: terms.iter().map(|t| (t.mode, Complex64::new(t.re, t.im))).collect() }
            }
        }
    }

    pub fn kick_model(&self) -> qsens_core::Result<KickModel> {
        let m = &self.model;
        let family = match m.family {
            FamilyName::Free => KickFamily::Free,
            FamilyName::Position => {
                KickFamily::PositionKick { g: self.trig_polynomial(), alpha: m.alpha.unwrap_or(0.0) }
            }
            FamilyName::Cat => KickFamily::CatKick { matrix: m.matrix.unwrap_or(CAT_MATRIX) },
        };
        match m.tau {
            Some(t) => KickModel::new(family, t),
            None => KickModel::resonant(family, m.resonance.unwrap_or(1)),
        }
    }

    pub fn lattice_spec(&self) -> qsens_core::Result<LatticeSpec> {
        LatticeSpec::new(self.lattice.cutoff)
    }

    pub fn sector(&self) -> Result<BlochSector, String> {
        BlochSector::from_momentum(self.perturbation.p0).map_err(|e| e.to_string())
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions { boundary: self.model.boundary.map(Boundary::from), ..Default::default() }
    }

    pub fn perturbation_spec(&self) -> qsens_core::Result<PerturbationSpec> {
        let p = &self.perturbation;
        let mut spec =
            PerturbationSpec::new(p.q0, p.p0, p.v1, p.v2)?.with_fd_step(p.fd_step.unwrap_or(DEFAULT_FD_STEP));
        if let Some(w) = p.k_window {
            spec = spec.with_k_window(w);
        }
        spec.richardson = p.richardson;
        Ok(spec)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions { leakage_budget: self.run.leakage_budget, n_lo: self.run.n_lo, n_hi: self.run.n_hi }
    }
}
