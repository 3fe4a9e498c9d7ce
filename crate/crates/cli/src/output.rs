//! Summary records and the CSV/JSON writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use qsens_core::growth::{GrowthReport, SensitivityWitness, TraceSeries};
use qsens_core::Error;

use crate::config::{ConfigError, ExperimentConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

pub const SOFTWARE: Software = Software { name: "qsens", version: env!("CARGO_PKG_VERSION") };

/// Machine-readable failure record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leakage: Option<Vec<f64>>,
}

impl ErrorReport {
    pub fn from_core(e: &Error) -> Self {
        let (kind, leakage) = match e {
            Error::InsufficientData { leakage, .. } => ("insufficient_data", Some(leakage.clone())),
            Error::TooLarge { .. } => ("too_large", None),
            Error::SpectralDefect { .. } => ("spectral_defect", None),
            Error::Orientation(_) => ("orientation", None),
            _ => ("computation", None),
        };
        Self { kind, message: e.to_string(), path: None, leakage }
    }

    pub fn from_config(e: &ConfigError) -> Self {
        Self { kind: "invalid_config", message: e.message.clone(), path: Some(e.path.clone()), leakage: None }
    }

    pub fn other(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), path: None, leakage: None }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            "invalid_config" => 2,
            "io" => 1,
            _ => 3,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "error": self })).expect("error serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesInfo {
    pub steps: usize,
    pub cutoff: usize,
    pub beta: [f64; 2],
    pub k_window: usize,
    pub dyads: usize,
    pub fd_step: f64,
    pub final_leakage: f64,
    pub final_lost_weight: f64,
    pub final_wrapped_weight: f64,
}

impl SeriesInfo {
    pub fn of(series: &TraceSeries) -> Option<Self> {
        let p = series.params.as_ref()?;
        Some(Self {
            steps: *series.steps.last()?,
            cutoff: p.cutoff,
            beta: p.beta,
            k_window: p.k_window,
            dyads: p.dyads,
            fd_step: p.fd_step,
            final_leakage: *series.leakage.last()?,
            final_lost_weight: *series.lost_weight.last()?,
            final_wrapped_weight: *series.wrapped_weight.last()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFiles {
    pub table: Option<String>,
    pub plot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub kind: &'static str,
    pub software: Software,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub status: Status,
    pub report: Option<GrowthReport>,
    pub sensitivity: Vec<SensitivityWitness>,
    pub series: Option<SeriesInfo>,
    pub error: Option<ErrorReport>,
    pub files: RunFiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl RunSummary {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "run",
            software: SOFTWARE,
            config: config.clone(),
            config_sha256: config.hash(),
            status: Status::Ok,
            report: None,
            sensitivity: Vec::new(),
            series: None,
            error: None,
            files: RunFiles { table: None, plot: None },
            wall_time_s: None,
        }
    }
}

#[derive(Serialize)]
struct Row {
    n: usize,
    x1_re: f64,
    x1_im: f64,
    x2_re: f64,
    x2_im: f64,
    p1_re: f64,
    p1_im: f64,
    p2_re: f64,
    p2_im: f64,
    delta: f64,
    leakage: f64,
}

/// Per-step table: `n`, Re/Im of the raw traces of x1, x2, p1, p2, `delta`, `leakage`.
pub fn series_csv(series: &TraceSeries) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..series.len() {
        let t = &series.raw[i];
        w.serialize(Row {
            n: series.steps[i],
            x1_re: t[0].re,
            x1_im: t[0].im,
            x2_re: t[1].re,
            x2_im: t[1].im,
            p1_re: t[2].re,
            p1_im: t[2].im,
            p2_re: t[3].re,
            p2_im: t[3].im,
            delta: series.delta[i],
            leakage: series.leakage[i],
        })?;
    }
    Ok(w.into_inner()?)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

/// The single place files are written.
pub struct Writer {
    dir: PathBuf,
}

impl Writer {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Writes `name` and returns it for the summary's file list.
    pub fn write(&self, name: &str, bytes: &[u8]) -> anyhow::Result<String> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(name.to_string())
    }
}
