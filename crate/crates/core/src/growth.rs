//! The stroboscopic series `Delta(n)`, growth-law fits, the verdict, and the
//! closed-form cat-map oracle.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Parallelism;
use crate::floquet::{build_floquet, FloquetOp, KickModel};
use crate::lattice::{BlochSector, LatticeSpec};
use crate::perturbation::{build_rho0, normalize, PerturbationSpec, RhoZero, TraceEngine};

/// Default maximal truncation weight inside a fit window.
pub const DEFAULT_LEAKAGE_BUDGET: f64 = 1e-6;
/// `Delta(n)` below this is excluded from log fits.
pub const DELTA_FLOOR: f64 = 1e-14;
/// Per-kick rate above which growth counts as exponential.
pub const EXPONENTIAL_THRESHOLD: f64 = 0.1;
/// Log-log slope above which growth counts as polynomial.
pub const POLYNOMIAL_THRESHOLD: f64 = 0.5;

/// Parameters the series was computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub model: KickModel,
    pub cutoff: usize,
    pub beta: [f64; 2],
    pub spec: PerturbationSpec,
    pub fd_step: f64,
    pub k_window: usize,
    pub dyads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSeries {
    pub steps: Vec<usize>,
    pub raw: Vec<[Complex64; 4]>,
    pub normalized: Vec<[Complex64; 4]>,
    pub delta: Vec<f64>,
    /// Max over evolved vectors of lost + wrapped weight, cumulative.
    pub leakage: Vec<f64>,
    pub lost_weight: Vec<f64>,
    pub wrapped_weight: Vec<f64>,
    /// Kick period, for per-unit-time rates.
    pub tau: f64,
    pub params: Option<SeriesParams>,
}

impl TraceSeries {
    /// A bare `Delta(n)` record, for fitting data from elsewhere.
    pub fn from_delta(delta: Vec<f64>, leakage: Option<Vec<f64>>, tau: f64) -> Result<Self> {
        let n = delta.len();
        let leakage = leakage.unwrap_or_else(|| vec![0.0; n]);
        if leakage.len() != n {
            return invalid("delta and leakage lengths differ");
        }
        if delta.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return invalid("delta values must be finite and nonnegative");
        }
        let zero = [Complex64::new(0.0, 0.0); 4];
        Ok(Self {
            steps: (0..n).collect(),
            raw: vec![zero; n],
            normalized: vec![zero; n],
            delta,
            lost_weight: leakage.clone(),
            wrapped_weight: vec![0.0; n],
            leakage,
            tau,
            params: None,
        })
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// `Delta` rescaled by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.delta.iter_mut().for_each(|d| *d *= c);
        out
    }
}

fn delta_of(v: &[Complex64; 4]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `Delta(n)` for `n = 0..=steps`.
pub fn run_series(
    model: &KickModel,
    lattice: LatticeSpec,
    sector: BlochSector,
    spec: &PerturbationSpec,
    steps: usize,
    h: f64,
) -> Result<TraceSeries> {
    let expected = BlochSector::from_momentum(spec.p0)?;
    if expected != sector {
        return invalid(format!("sector {sector:?} does not match the perturbation momentum p0 = {:?}", spec.p0));
    }
    let op = build_floquet(model, lattice, sector)?;
    let rho = build_rho0(spec, lattice)?;
    run_series_with(&op, &rho, steps, h, Parallelism::default())
}

/// [`run_series`] on a prebuilt operator and perturbation.
pub fn run_series_with(
    op: &FloquetOp,
    rho: &RhoZero,
    steps: usize,
    h: f64,
    parallelism: Parallelism,
) -> Result<TraceSeries> {
    if steps < 2 {
        return invalid(format!("need at least 2 steps, got {steps}"));
    }
    let mut engine = TraceEngine::new(rho, op, h, parallelism)?;
    let points = engine.run_to(steps)?;
    let raw0 = points[0].raw;
    let mut series = TraceSeries {
        steps: Vec::with_capacity(points.len()),
        raw: Vec::with_capacity(points.len()),
        normalized: Vec::with_capacity(points.len()),
        delta: Vec::with_capacity(points.len()),
        leakage: Vec::with_capacity(points.len()),
        lost_weight: Vec::with_capacity(points.len()),
        wrapped_weight: Vec::with_capacity(points.len()),
        tau: op.model().tau,
        params: Some(SeriesParams {
            model: op.model().clone(),
            cutoff: op.lattice().cutoff(),
            beta: op.sector().beta,
            spec: rho.spec().clone(),
            fd_step: h,
            k_window: rho.k_window(),
            dyads: rho.k_set().len(),
        }),
    };
    for p in points {
        let norm = normalize(&raw0, &p.raw)?;
        series.steps.push(p.n);
        series.raw.push(p.raw);
        series.delta.push(delta_of(&norm));
        series.normalized.push(norm);
        series.leakage.push(p.leakage);
        series.lost_weight.push(p.lost_weight);
        series.wrapped_weight.push(p.wrapped_weight);
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Polynomial,
    Exponential,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Bounded => "bounded",
            Verdict::Polynomial => "polynomial",
            Verdict::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub leakage_budget: f64,
    /// First step of the fit window.
    pub n_lo: usize,
    /// Optional last step; the leakage prefix still applies.
    pub n_hi: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { leakage_budget: DEFAULT_LEAKAGE_BUDGET, n_lo: 0, n_hi: None }
    }
}

/// Change of `Delta` and of the fitted rate between two cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationProbe {
    pub cutoff_small: usize,
    pub cutoff_large: usize,
    /// Max over the fit window of `|Delta_large - Delta_small| / Delta_large`.
    pub delta_rel_change: f64,
    pub lambda_rel_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Per-kick slope of `ln Delta` against `n`.
    pub lambda_hat: f64,
    pub lambda_r2: f64,
    /// `lambda_hat / tau`.
    pub lambda_per_time: f64,
    /// Slope of `ln Delta` against `ln n` over `n >= 1`.
    pub degree_hat: f64,
    pub degree_r2: f64,
    pub verdict: Verdict,
    pub sensitive_dependent: bool,
    pub window: [usize; 2],
    pub points: usize,
    pub leakage_budget: f64,
    pub leakage_at_n_hi: f64,
    pub exponential_threshold: f64,
    pub polynomial_threshold: f64,
    pub truncation_probe: Option<TruncationProbe>,
}

/// Least-squares slope and coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy <= 1e-28 * n {
        1.0
    } else {
        let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    (slope, r2)
}

/// Fits exponential and power laws over the leakage-budgeted window and
/// classifies the growth.
pub fn fit_growth(series: &TraceSeries, options: FitOptions) -> Result<GrowthReport> {
    let insufficient = |usable| Error::InsufficientData { usable, leakage: series.leakage.clone() };
    let prefix = series.leakage.iter().take_while(|l| **l <= options.leakage_budget).count();
    if prefix == 0 {
        return Err(insufficient(0));
    }
    let mut n_hi = series.steps[prefix - 1];
    if let Some(cap) = options.n_hi {
        n_hi = n_hi.min(cap);
    }
    let picked: Vec<(f64, f64)> = series
        .steps
        .iter()
        .zip(&series.delta)
        .take(prefix)
        .filter(|(n, d)| **n >= options.n_lo && **n <= n_hi && **d >= DELTA_FLOOR)
        .map(|(n, d)| (*n as f64, d.ln()))
        .collect();
    if picked.len() < 3 {
        return Err(insufficient(picked.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = picked.iter().copied().unzip();
    let (lambda_hat, lambda_r2) = linear_fit(&xs, &ys);
    let (lx, ly): (Vec<f64>, Vec<f64>) = picked.iter().filter(|(n, _)| *n >= 1.0).map(|(n, y)| (n.ln(), *y)).unzip();
    let (degree_hat, degree_r2) = if lx.len() >= 2 { linear_fit(&lx, &ly) } else { (0.0, 0.0) };
    let verdict = if lambda_hat > EXPONENTIAL_THRESHOLD && lambda_r2 >= degree_r2 {
        Verdict::Exponential
    } else if degree_hat > POLYNOMIAL_THRESHOLD {
        Verdict::Polynomial
    } else {
        Verdict::Bounded
    };
    let hi_index = series.steps.iter().position(|n| *n == n_hi).unwrap_or(prefix - 1);
    Ok(GrowthReport {
        lambda_hat,
        lambda_r2,
        lambda_per_time: lambda_hat / series.tau,
        degree_hat,
        degree_r2,
        verdict,
        sensitive_dependent: verdict != Verdict::Bounded,
        window: [picked[0].0 as usize, n_hi],
        points: picked.len(),
        leakage_budget: options.leakage_budget,
        leakage_at_n_hi: series.leakage[hi_index],
        exponential_threshold: EXPONENTIAL_THRESHOLD,
        polynomial_threshold: POLYNOMIAL_THRESHOLD,
        truncation_probe: None,
    })
}

/// Compares a series with its larger-cutoff counterpart over `report`'s window.
pub fn truncation_probe(
    small: &TraceSeries,
    large: &TraceSeries,
    report: &GrowthReport,
    options: FitOptions,
) -> Result<TruncationProbe> {
    let [lo, hi] = report.window;
    let mut worst: f64 = 0.0;
    for n in lo..=hi {
        let (Some(a), Some(b)) = (small.delta.get(n), large.delta.get(n)) else {
            return invalid("series too short for the fit window");
        };
        worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
    }
    let windowed = FitOptions { n_lo: lo, n_hi: Some(hi), ..options };
    let big = fit_growth(large, windowed)?;
    let cutoff = |s: &TraceSeries| s.params.as_ref().map_or(0, |p| p.cutoff);
    Ok(TruncationProbe {
        cutoff_small: cutoff(small),
        cutoff_large: cutoff(large),
        delta_rel_change: worst,
        lambda_rel_change: ((report.lambda_hat - big.lambda_hat) / big.lambda_hat).abs(),
    })
}

/// Golden ratio `(1 + sqrt 5) / 2`.
pub fn omega() -> f64 {
    (1.0 + 5f64.sqrt()) / 2.0
}

/// Closed-form `M^n` for `M = [[1,1],[1,2]]`, whose eigenvalues are `omega^{+-2}`.
pub fn cat_oracle_power(n: u32) -> [[f64; 2]; 2] {
    let w = omega();
    let p = |e: i64| w.powi(e as i32);
    let n = n as i64;
    let s = 1.0 / 5f64.sqrt();
    [
        [s * (p(-2 * n + 1) + p(2 * n - 1)), s * (p(2 * n) - p(-2 * n))],
        [s * (p(2 * n) - p(-2 * n)), s * (p(-2 * n - 1) + p(2 * n + 1))],
    ]
}

/// Outcome of the finite-horizon test `max_{T < n <= N} Delta(n)/Delta(0) > M`.
/// A witness for a finite record only; the asymptotic definition quantifies
/// over all horizons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityWitness {
    pub threshold: f64,
    pub horizon: usize,
    pub last_step: usize,
    pub max_ratio: f64,
    pub first_exceeding_step: Option<usize>,
    pub exceeded: bool,
}

pub fn sensitivity_probe(series: &TraceSeries, thresholds: &[f64], horizon: usize) -> Vec<SensitivityWitness> {
    let d0 = series.delta.first().copied().unwrap_or(0.0);
    let last_step = series.steps.last().copied().unwrap_or(0);
    thresholds
        .iter()
        .map(|&m| {
            let mut max_ratio: f64 = 0.0;
            let mut first = None;
            for (n, d) in series.steps.iter().zip(&series.delta) {
                if *n <= horizon {
                    continue;
                }
                let r = d / d0;
                max_ratio = max_ratio.max(r);
                if r > m && first.is_none() {
                    first = Some(*n);
                }
            }
            SensitivityWitness {
                threshold: m,
                horizon,
                last_step,
                max_ratio,
                first_exceeding_step: first,
                exceeded: first.is_some(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{mat_pow, CAT_MATRIX};

    fn synthetic(f: impl Fn(f64) -> f64, n: usize) -> TraceSeries {
        TraceSeries::from_delta((0..=n).map(|i| f(i as f64)).collect(), None, 4.0 * std::f64::consts::PI).unwrap()
    }

    #[test]
    fn golden_exponential() {
        let r = 2.0 * omega().ln();
        let s = synthetic(|n| (r * n).exp(), 8);
        let g = fit_growth(&s, FitOptions::default()).unwrap();
        assert!((g.lambda_hat - 0.962_423_650_119_206_9).abs() < 1e-9);
        assert_eq!(g.verdict, Verdict::Exponential);
        assert!(g.sensitive_dependent);
        assert!((g.lambda_per_time - g.lambda_hat / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn constant_is_bounded() {
        let g = fit_growth(&synthetic(|_| 2.5, 20), FitOptions::default()).unwrap();
        assert_eq!(g.verdict, Verdict::Bounded);
        assert!(!g.sensitive_dependent);
        assert!(g.lambda_hat.abs() < 1e-14);
        assert!(g.degree_hat.abs() < 1e-14);
    }

    #[test]
    fn affine_is_polynomial() {
        let s = synthetic(|n| 3.0 * n + 1.0, 64);
        let g = fit_growth(&s, FitOptions { n_lo: 4, ..Default::default() }).unwrap();
        assert_eq!(g.verdict, Verdict::Polynomial);
        assert!((g.degree_hat - 1.0).abs() < 0.05, "{}", g.degree_hat);
        assert_eq!(g.window, [4, 64]);
    }

    #[test]
    fn exponential_rates_recovered() {
        for lam in [0.1, 0.5, 2.0 * omega().ln()] {
            let g = fit_growth(&synthetic(|n| (lam * n).exp(), 4), FitOptions::default()).unwrap();
            assert!((g.lambda_hat - lam).abs() < 1e-9);
        }
    }

    #[test]
    fn monomial_degrees_recovered() {
        for d in [1.0, 2.0] {
            let s = synthetic(|n| n.powf(d), 64);
            let g = fit_growth(&s, FitOptions { n_lo: 4, ..Default::default() }).unwrap();
            assert!((g.degree_hat - d).abs() < 1e-6);
        }
    }

    #[test]
    fn leakage_limits_window() {
        let leak = vec![0.0, 0.0, 1e-9, 1e-7, 1e-5, 1e-3, 0.1];
        let s = TraceSeries::from_delta((0..7).map(|n| 2f64.powi(n)).collect(), Some(leak.clone()), 1.0).unwrap();
        let g = fit_growth(&s, FitOptions::default()).unwrap();
        assert_eq!(g.window, [0, 3]);
        assert_eq!(g.leakage_at_n_hi, 1e-7);
        let tight = FitOptions { leakage_budget: 1e-10, ..Default::default() };
        match fit_growth(&s, tight) {
            Err(Error::InsufficientData { usable, leakage }) => {
                assert_eq!(usable, 2);
                assert_eq!(leakage, leak);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tiny_deltas_excluded() {
        let s = synthetic(|n| if n == 3.0 { 0.0 } else { 1.0 + n }, 6);
        let g = fit_growth(&s, FitOptions::default()).unwrap();
        assert_eq!(g.points, 6);
    }

    #[test]
    fn oracle_matches_integer_powers() {
        for n in 0..=30u32 {
            let exact = mat_pow(&CAT_MATRIX, n);
            let closed = cat_oracle_power(n);
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(closed[i][j].round() as i64, exact[i][j], "n={n}");
                }
            }
        }
        assert_eq!(cat_oracle_power(1).map(|r| r.map(|x| x.round())), [[1.0, 1.0], [1.0, 2.0]]);
    }

    #[test]
    fn probe_thresholds() {
        let lin = synthetic(|n| n + 1.0, 12);
        let w = sensitivity_probe(&lin, &[10.0], 5);
        assert!(w[0].exceeded);
        assert_eq!(w[0].first_exceeding_step, Some(10));
        let short = synthetic(|n| n + 1.0, 9);
        assert!(!sensitivity_probe(&short, &[10.0], 5)[0].exceeded);
        let flat = synthetic(|_| 1.0, 50);
        for m in [1.5, 10.0, 100.0] {
            for t in [0, 10, 40] {
                assert!(!sensitivity_probe(&flat, &[m], t)[0].exceeded);
            }
        }
        let r = 2.0 * omega().ln();
        let cat = synthetic(|n| (r * n).exp(), 6);
        let w = sensitivity_probe(&cat, &[17.0, 46.0, 100.0], 1);
        assert_eq!(w.iter().map(|x| x.first_exceeding_step).collect::<Vec<_>>(), [Some(3), Some(4), Some(5)]);
    }

    #[test]
    fn short_series_rejected() {
        let s = TraceSeries::from_delta(vec![1.0, 2.0], None, 1.0).unwrap();
        assert!(matches!(fit_growth(&s, FitOptions::default()), Err(Error::InsufficientData { .. })));
    }
}
