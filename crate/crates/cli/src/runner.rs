//! The `run`, `sweep` and `spectrum` subcommands.

use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use qsens_core::exec::Parallelism;
use qsens_core::floquet::FloquetOp;
use qsens_core::growth::{fit_growth, run_series_with, sensitivity_probe, GrowthReport, TraceSeries, Verdict};
use qsens_core::perturbation::{build_rho0, TraceEngine};
use qsens_core::spectral::{kernel_profile, reconstruct_trace, spectral_kernel, KernelProfile};

use crate::config::{ExperimentConfig, SweepParameter, SCHEMA_VERSION};
use crate::output::{self, ErrorReport, RunSummary, SeriesInfo, Software, Status, Writer, SOFTWARE};
use crate::plot;

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub plot: Option<bool>,
    pub timing: bool,
}

impl Settings {
    fn plot(&self, config: &ExperimentConfig) -> bool {
        self.plot.unwrap_or(config.output.plot)
    }
}

/// One computed experiment before anything is written.
pub struct Point {
    pub config: ExperimentConfig,
    pub series: Option<TraceSeries>,
    pub report: Option<GrowthReport>,
    pub error: Option<ErrorReport>,
    pub seconds: f64,
}

fn operator(config: &ExperimentConfig) -> qsens_core::Result<FloquetOp> {
    let sector = config.sector().map_err(qsens_core::Error::InvalidArgument)?;
    FloquetOp::build(&config.kick_model()?, config.lattice_spec()?, sector, config.build_options())
}

fn series_of(config: &ExperimentConfig) -> qsens_core::Result<TraceSeries> {
    let op = operator(config)?;
    let spec = config.perturbation_spec()?;
    let rho = build_rho0(&spec, op.lattice())?;
    run_series_with(&op, &rho, config.run.steps, spec.fd_step, Parallelism::Parallel)
}

pub fn compute(config: &ExperimentConfig) -> Point {
    let t = Instant::now();
    let mut point = Point { config: config.clone(), series: None, report: None, error: None, seconds: 0.0 };
    match series_of(config) {
        Ok(series) => {
            match fit_growth(&series, config.fit_options()) {
                Ok(r) => point.report = Some(r),
                Err(e) => point.error = Some(ErrorReport::from_core(&e)),
            }
            point.series = Some(series);
        }
        Err(e) => point.error = Some(ErrorReport::from_core(&e)),
    }
    point.seconds = t.elapsed().as_secs_f64();
    point
}

/// Writes the table, chart and summary of one point under `stem`.
pub fn write_point(writer: &Writer, stem: &str, point: &Point, settings: Settings) -> anyhow::Result<RunSummary> {
    let mut summary = RunSummary::new(&point.config);
    if let Some(series) = &point.series {
        summary.files.table = Some(writer.write(&format!("{stem}.csv"), &output::series_csv(series)?)?);
        summary.sensitivity = sensitivity_probe(series, &point.config.run.thresholds, point.config.run.horizon);
        summary.series = SeriesInfo::of(series);
        if let (Some(report), true) = (&point.report, settings.plot(&point.config)) {
            let svg = plot::growth_chart(stem, series, report);
            summary.files.plot = Some(writer.write(&format!("{stem}.svg"), svg.as_bytes())?);
        }
    }
    summary.report = point.report.clone();
    summary.error = point.error.clone();
    summary.status = if point.error.is_some() { Status::Failed } else { Status::Ok };
    summary.wall_time_s = settings.timing.then_some(point.seconds);
    writer.write(&format!("{stem}.json"), output::to_json(&summary).as_bytes())?;
    Ok(summary)
}

pub fn run(config: &ExperimentConfig, writer: &Writer, settings: Settings) -> anyhow::Result<RunSummary> {
    let point = compute(config);
    write_point(writer, config.prefix(), &point, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPointRecord {
    pub value: f64,
    pub summary: String,
    pub status: Status,
    pub lambda_hat: Option<f64>,
    pub degree_hat: Option<f64>,
    pub verdict: Option<Verdict>,
    /// Max relative deviation of `Delta` from a Richardson-extrapolated reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_error: Option<f64>,
}

/// Error ratio between neighbouring finite-difference steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdOrder {
    pub h_large: f64,
    pub h_small: f64,
    pub ratio: f64,
    /// `(h_large / h_small)^2` for a second-order difference.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub kind: &'static str,
    pub software: Software,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub parameter: SweepParameter,
    pub points: Vec<SweepPointRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fd_order: Vec<FdOrder>,
    pub aggregate: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Serialize)]
struct AggregateRow {
    value: f64,
    lambda_hat: Option<f64>,
    degree_hat: Option<f64>,
    verdict: Option<Verdict>,
    status: Status,
}

fn fd_reference(config: &ExperimentConfig, values: &[f64]) -> Option<TraceSeries> {
    let h = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut c = config.with_parameter(SweepParameter::FdStep, h).ok()?;
    c.perturbation.richardson = true;
    series_of(&c).ok()
}

fn fd_error(series: &TraceSeries, reference: &TraceSeries) -> f64 {
    series
        .delta
        .iter()
        .zip(&reference.delta)
        .filter(|(_, r)| **r > 0.0)
        .map(|(d, r)| (d - r).abs() / r)
        .fold(0.0, f64::max)
}

/// Runs every sweep block; points run concurrently and are written in order.
pub fn sweep(config: &ExperimentConfig, writer: &Writer, settings: Settings) -> anyhow::Result<Vec<SweepSummary>> {
    if config.sweep.is_empty() {
        anyhow::bail!(
            ErrorReport::other("invalid_config", format!("config `{}` has no [[sweep]] block", config.name)).to_json()
        );
    }
    let mut out = Vec::new();
    for block in &config.sweep {
        let t = Instant::now();
        let points: Vec<Point> = block
            .values
            .par_iter()
            .map(|v| match config.with_parameter(block.parameter, *v) {
                Ok(c) => compute(&c),
                Err(e) => Point {
                    config: config.clone(),
                    series: None,
                    report: None,
                    error: Some(ErrorReport::from_config(&e)),
                    seconds: 0.0,
                },
            })
            .collect();
        let reference =
            (block.parameter == SweepParameter::FdStep).then(|| fd_reference(config, &block.values)).flatten();
        let base = format!("{}_{}", config.prefix(), block.parameter.short());
        let mut records = Vec::new();
        let mut agg = csv::Writer::from_writer(Vec::new());
        for (i, (value, point)) in block.values.iter().zip(&points).enumerate() {
            let s = write_point(writer, &format!("{base}_{i}"), point, settings)?;
            let r = point.report.as_ref();
            let rec = SweepPointRecord {
                value: *value,
                summary: format!("{base}_{i}.json"),
                status: s.status,
                lambda_hat: r.map(|r| r.lambda_hat),
                degree_hat: r.map(|r| r.degree_hat),
                verdict: r.map(|r| r.verdict),
                fd_error: reference.as_ref().zip(point.series.as_ref()).map(|(r, s)| fd_error(s, r)),
            };
            agg.serialize(AggregateRow {
                value: rec.value,
                lambda_hat: rec.lambda_hat,
                degree_hat: rec.degree_hat,
                verdict: rec.verdict,
                status: rec.status,
            })?;
            records.push(rec);
        }
        let mut fd_order = Vec::new();
        if reference.is_some() {
            let mut by_h: Vec<&SweepPointRecord> = records.iter().filter(|r| r.fd_error.is_some()).collect();
            by_h.sort_by(|a, b| b.value.total_cmp(&a.value));
            for w in by_h.windows(2) {
                let (ea, eb) = (w[0].fd_error.unwrap_or(0.0), w[1].fd_error.unwrap_or(0.0));
                fd_order.push(FdOrder {
                    h_large: w[0].value,
                    h_small: w[1].value,
                    ratio: if eb > 0.0 { ea / eb } else { f64::INFINITY },
                    expected: (w[0].value / w[1].value).powi(2),
                });
            }
        }
        let aggregate = writer.write(&format!("{base}_sweep.csv"), &agg.into_inner()?)?;
        let summary = SweepSummary {
            schema_version: SCHEMA_VERSION,
            kind: "sweep",
            software: SOFTWARE,
            config: config.clone(),
            config_sha256: config.hash(),
            parameter: block.parameter,
            points: records,
            fd_order,
            aggregate,
            wall_time_s: settings.timing.then(|| t.elapsed().as_secs_f64()),
        };
        writer.write(&format!("{base}_sweep.json"), output::to_json(&summary).as_bytes())?;
        out.push(summary);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSpectrum {
    pub beta: [f64; 2],
    pub defect: f64,
    pub modulus_defect: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub max_n: usize,
    /// Componentwise relative error against direct evolution, per step.
    pub rel_error: Vec<f64>,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parseval {
    pub eigenbasis: f64,
    pub frobenius: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumFiles {
    pub eigenphases: Option<String>,
    pub plot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub schema_version: u32,
    pub kind: &'static str,
    pub software: Software,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub status: Status,
    pub cutoff: usize,
    pub dim: usize,
    pub terms: Vec<TermSpectrum>,
    pub parseval: Option<Parseval>,
    pub profile: Option<KernelProfile>,
    pub reconstruction: Option<Reconstruction>,
    pub error: Option<ErrorReport>,
    pub files: SpectrumFiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// Componentwise relative error of `a` against `b`. Components of `b` below
/// `1e-12 * scale` are numerically zero and measured against `scale`.
pub fn componentwise_rel(a: &[Complex64; 4], b: &[Complex64; 4], scale: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = if y.norm() > 1e-12 * scale { y.norm() } else { scale.max(f64::MIN_POSITIVE) };
            (x - y).norm() / d
        })
        .fold(0.0, f64::max)
}

/// Largest trace component over a series.
pub fn series_scale<'a>(traces: impl IntoIterator<Item = &'a [Complex64; 4]>) -> f64 {
    traces.into_iter().flatten().map(|c| c.norm()).fold(0.0, f64::max)
}

/// The configuration the spectral analysis actually uses.
pub fn spectrum_config(config: &ExperimentConfig) -> ExperimentConfig {
    let s = config.spectrum.clone().unwrap_or_default();
    let mut c = config.clone();
    if let Some(k) = s.cutoff {
        c.lattice.cutoff = k;
        if let Some(w) = c.perturbation.k_window {
            c.perturbation.k_window = Some(w.min(k));
        }
    }
    if s.boundary.is_some() {
        c.model.boundary = s.boundary;
    }
    if let Some(v) = s.v1 {
        c.perturbation.v1 = v;
    }
    if let Some(v) = s.v2 {
        c.perturbation.v2 = v;
    }
    if s.k_window.is_some() {
        c.perturbation.k_window = s.k_window;
    }
    if s.fd_step.is_some() {
        c.perturbation.fd_step = s.fd_step;
    }
    c.spectrum = None;
    c.sweep.clear();
    c
}

pub fn spectrum(config: &ExperimentConfig, writer: &Writer, settings: Settings) -> anyhow::Result<SpectrumSummary> {
    let t = Instant::now();
    let opts = config.spectrum.clone().unwrap_or_default();
    let sc = spectrum_config(config);
    let mut summary = SpectrumSummary {
        schema_version: SCHEMA_VERSION,
        kind: "spectrum",
        software: SOFTWARE,
        config: config.clone(),
        config_sha256: config.hash(),
        status: Status::Ok,
        cutoff: sc.lattice.cutoff,
        dim: (2 * sc.lattice.cutoff + 1).pow(2),
        terms: Vec::new(),
        parseval: None,
        profile: None,
        reconstruction: None,
        error: None,
        files: SpectrumFiles { eigenphases: None, plot: None },
        wall_time_s: None,
    };
    let stem = format!("{}_spectrum", config.prefix());
    let result = (|| -> qsens_core::Result<Vec<[String; 4]>> {
        if let Err(e) = sc.validate() {
            return Err(qsens_core::Error::InvalidArgument(format!("spectrum overrides: {e}")));
        }
        let op = operator(&sc)?;
        let spec = sc.perturbation_spec()?;
        let rho = build_rho0(&spec, op.lattice())?;
        let kernel = spectral_kernel(&op, &rho, spec.fd_step)?;
        summary.terms = kernel
            .terms
            .iter()
            .map(|k| TermSpectrum {
                beta: k.term.sector.beta,
                defect: k.spectrum.defect,
                modulus_defect: k.spectrum.modulus_defect,
                usable: k.spectrum.usable(),
            })
            .collect();
        let mut rows = Vec::new();
        for (ti, k) in kernel.terms.iter().enumerate() {
            for (i, (ph, ev)) in k.spectrum.eigenphases.iter().zip(&k.spectrum.eigenvalues).enumerate() {
                rows.push([ti.to_string(), i.to_string(), ph.to_string(), ev.norm().to_string()]);
            }
        }
        let (e, f) = kernel.parseval();
        summary.parseval =
            Some(Parseval { eigenbasis: e, frobenius: f, rel_diff: (e - f).abs() / f.max(f64::MIN_POSITIVE) });
        summary.profile = Some(kernel_profile(&kernel, opts.bins)?);
        let mut engine = TraceEngine::new(&rho, &op, spec.fd_step, Parallelism::Parallel)?;
        let direct = engine.run_to(opts.max_n)?;
        let scale = series_scale(direct.iter().map(|p| &p.raw));
        let mut rel_error = Vec::new();
        for p in &direct {
            rel_error.push(componentwise_rel(&reconstruct_trace(&kernel, p.n)?, &p.raw, scale));
        }
        let max_rel_error = rel_error.iter().copied().fold(0.0, f64::max);
        summary.reconstruction = Some(Reconstruction { max_n: opts.max_n, rel_error, max_rel_error });
        Ok(rows)
    })();
    match result {
        Ok(rows) => {
            let mut table = csv::Writer::from_writer(Vec::new());
            table.write_record(["term", "index", "phase", "modulus"])?;
            for r in rows {
                table.write_record(r)?;
            }
            summary.files.eigenphases = Some(writer.write(&format!("{stem}_eigenphases.csv"), &table.into_inner()?)?);
        }
        Err(e) => {
            summary.status = Status::Failed;
            summary.error = Some(ErrorReport::from_core(&e));
        }
    }
    if let (Some(profile), true) = (&summary.profile, settings.plot(config)) {
        let svg = plot::profile_chart(&stem, profile);
        summary.files.plot = Some(writer.write(&format!("{stem}.svg"), svg.as_bytes())?);
    }
    summary.wall_time_s = settings.timing.then(|| t.elapsed().as_secs_f64());
    writer.write(&format!("{stem}.json"), output::to_json(&summary).as_bytes())?;
    Ok(summary)
}
