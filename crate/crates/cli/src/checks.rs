//! The `check` subcommand: invariant suite at small cutoffs.

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use qsens_core::exec::Parallelism;
use qsens_core::floquet::{
    build_floquet, inverse, mat_pow, verify_cat_heisenberg, BuildOptions, CatOrientation, FloquetOp, KickFamily,
    KickModel, TrigPolynomial, CAT_MATRIX,
};
use qsens_core::growth::{cat_oracle_power, fit_growth, omega, run_series_with, FitOptions, TraceSeries};
use qsens_core::lattice::{
    position_coefficient, BlochSector, LatticeSpec, ObservableKind, ObservableMatrix, StateVector,
};
use qsens_core::perturbation::{build_rho0, trace_pair, PerturbationSpec, TraceEngine};
use qsens_core::spectral::{characteristic_gradient_check, diagonalize, reconstruct_trace, spectral_kernel};

use crate::runner::{componentwise_rel, series_scale};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Test hook: build the cat kick with the wrong lattice map.
    pub corrupt_cat_orientation: bool,
}

fn row(name: impl Into<String>, value: f64, tolerance: f64) -> CheckRow {
    CheckRow { name: name.into(), value, tolerance, passed: value <= tolerance }
}

fn failed(name: impl Into<String>, e: qsens_core::Error) -> CheckRow {
    CheckRow { name: format!("{} ({e})", name.into()), value: f64::INFINITY, tolerance: 0.0, passed: false }
}

fn op(family: KickFamily, k: usize, p0: [f64; 2]) -> qsens_core::Result<FloquetOp> {
    build_floquet(&KickModel::resonant(family, 1)?, LatticeSpec::new(k)?, BlochSector::from_momentum(p0)?)
}

fn cos() -> KickFamily {
    KickFamily::PositionKick { g: TrigPolynomial::cos_sum(), alpha: 1.0 }
}

fn cat() -> KickFamily {
    KickFamily::CatKick { matrix: CAT_MATRIX }
}

type Check = fn(&mut StdRng, &CheckOptions) -> qsens_core::Result<Vec<CheckRow>>;

fn hermiticity(rng: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let l = LatticeSpec::new(4)?;
    let beta = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let mut err: f64 = 0.0;
    for _ in 0..16 {
        let mut vec = || {
            let a = (0..l.dim())
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            StateVector::from_amplitudes(l, beta, a)
        };
        let (u, v) = (vec()?, vec()?);
        for kind in ObservableKind::ALL {
            let o = ObservableMatrix::new(kind, l);
            let lhs = u.inner(&o.apply(&v)?)?;
            let rhs = o.apply(&u)?.inner(&v)?;
            err = err.max((lhs - rhs).norm() / (1.0 + lhs.norm()));
        }
    }
    let conj =
        (-50..=50).map(|m| (position_coefficient(-m) - position_coefficient(m).conj()).norm()).fold(0.0, f64::max);
    Ok(vec![
        row("observables Hermitian (random vectors, K=4)", err, 1e-12),
        row("sawtooth coefficients c_-m = conj(c_m)", conj, 0.0),
    ])
}

fn unitarity(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let kick = op(cos(), 8, [0.25, 0.25])?;
    let u = kick.to_dense()?;
    let d = u.nrows();
    let g = u.adjoint() * &u;
    let mut defect: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((g[(i, j)] - Complex64::new(id, 0.0)).norm());
        }
    }
    let spec = diagonalize(&kick)?;
    let free = op(KickFamily::Free, 8, [0.0; 2])?;
    let free_defect = free.free_phases().iter().map(|p| (p - Complex64::new(1.0, 0.0)).norm()).fold(0.0, f64::max);
    Ok(vec![
        row("position kick unitary, |U^dag U - I| (K=8)", defect, 1e-10),
        row("position kick eigenvalue moduli within 1e-8 of 1", spec.modulus_defect, 1e-8),
        row("free resonant operator is the identity at beta=0", free_defect, 0.0),
    ])
}

fn cat_orientation(_: &mut StdRng, options: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let model = KickModel::resonant(cat(), 1)?;
    let l = LatticeSpec::new(8)?;
    let sector = BlochSector::from_momentum([0.0; 2])?;
    let mut o = FloquetOp::build(&model, l, sector, BuildOptions::default())?;
    if options.corrupt_cat_orientation {
        let wrong = inverse(&o.lattice_map().expect("cat kick has a lattice map"));
        o = FloquetOp::build(
            &model,
            l,
            sector,
            BuildOptions { orientation: CatOrientation::Forced(wrong), ..Default::default() },
        )?;
    }
    let mut rows = Vec::new();
    for steps in [1, 2] {
        let h = verify_cat_heisenberg(&o, steps)?;
        rows.push(row(
            format!("cat Heisenberg U^dag p U = M p, n={steps} ({} interior modes)", h.modes_checked),
            h.momentum_error.max(h.position_error),
            1e-12,
        ));
    }
    Ok(rows)
}

fn oracle(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let mut bad = 0.0;
    for n in 0..=30 {
        let (e, c) = (mat_pow(&CAT_MATRIX, n), cat_oracle_power(n));
        for i in 0..2 {
            for j in 0..2 {
                if c[i][j].round() as i64 != e[i][j] {
                    bad += 1.0;
                }
            }
        }
    }
    Ok(vec![row("closed-form M^n equals integer powers, n <= 30 (mismatches)", bad, 0.0)])
}

fn linearity(rng: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let p0 = [0.25, 0.25];
    let o = op(cos(), 6, p0)?;
    let mut err: f64 = 0.0;
    for _ in 0..4 {
        let mut r = || [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (v1, v2, w1, w2) = (r(), r(), r(), r());
        let t = |a: [f64; 2], b: [f64; 2]| -> qsens_core::Result<[Complex64; 4]> {
            let spec = PerturbationSpec::new([0.3, -0.1], p0, a, b)?.with_k_window(2);
            Ok(trace_pair(&build_rho0(&spec, o.lattice())?, &o, 3, 1e-3)?.raw)
        };
        let sum = t([v1[0] + w1[0], v1[1] + w1[1]], [v2[0] + w2[0], v2[1] + w2[1]])?;
        let (a, b) = (t(v1, v2)?, t(w1, w2)?);
        for c in 0..4 {
            err = err.max((sum[c] - a[c] - b[c]).norm() / (1.0 + (a[c] + b[c]).norm()));
        }
    }
    Ok(vec![row("trace_pair linear in (v1, v2) (random directions)", err, 1e-12)])
}

fn spectral(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let p0 = [0.25, 0.25];
    let mut rows = Vec::new();
    for (name, family, p0, v2) in
        [("free", KickFamily::Free, [0.0; 2], [0.0; 2]), ("position kick", cos(), p0, [0.5, 1.0])]
    {
        let o = op(family, 8, p0)?;
        let spec = PerturbationSpec::new([0.3, -0.2], p0, [1.0, 0.5], v2)?.with_k_window(3);
        let rho = build_rho0(&spec, o.lattice())?;
        let kernel = spectral_kernel(&o, &rho, 1e-3)?;
        let mut engine = TraceEngine::new(&rho, &o, 1e-3, Parallelism::Parallel)?;
        let direct = engine.run_to(20)?;
        let scale = series_scale(direct.iter().map(|p| &p.raw));
        let mut err: f64 = 0.0;
        for p in &direct {
            err = err.max(componentwise_rel(&reconstruct_trace(&kernel, p.n)?, &p.raw, scale));
        }
        let (e, f) = kernel.parseval();
        rows.push(row(format!("spectral reconstruction vs direct, {name}, K=8, n <= 20"), err, 1e-8));
        rows.push(row(format!("Parseval sum |rho(mu,nu)|^2, {name} (relative)"), (e - f).abs() / f, 1e-10));
    }
    Ok(rows)
}

fn characteristic(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (name, family, p0) in
        [("free", KickFamily::Free, [0.0; 2]), ("position kick", cos(), [0.25, 0.25]), ("cat", cat(), [0.0; 2])]
    {
        let o = op(family, 8, p0)?;
        let spec = PerturbationSpec::new([0.3, -0.2], p0, [1.0, 0.5], [0.5, 1.0])?.with_k_window(2);
        let rho = build_rho0(&spec, o.lattice())?;
        for n in [0, 1, 5] {
            let c = characteristic_gradient_check(&o, &rho, n, 1e-3, 1e-3)?;
            rows.push(row(format!("characteristic gradient vs traces, {name}, n={n}"), c.discrepancy, 1e-5));
            rows.push(row(
                format!("  central-difference order, {name}, n={n}: |ratio - 4|"),
                (c.convergence_ratio - 4.0).abs(),
                0.4,
            ));
        }
    }
    Ok(rows)
}

fn fitting(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let mut exp: f64 = 0.0;
    for lam in [0.1, 0.5, 2.0 * omega().ln()] {
        let s = TraceSeries::from_delta((0..=6).map(|n| (lam * n as f64).exp()).collect(), None, 1.0)?;
        exp = exp.max((fit_growth(&s, FitOptions::default())?.lambda_hat - lam).abs());
    }
    let mut mono: f64 = 0.0;
    for d in [1.0, 2.0] {
        let s = TraceSeries::from_delta((0..=64).map(|n| (n as f64).powf(d)).collect(), None, 1.0)?;
        mono = mono.max((fit_growth(&s, FitOptions { n_lo: 4, ..Default::default() })?.degree_hat - d).abs());
    }
    Ok(vec![
        row("fit recovers synthetic exponentials", exp, 1e-9),
        row("fit recovers synthetic monomials on [4, 64]", mono, 1e-6),
    ])
}

fn determinism(_: &mut StdRng, _: &CheckOptions) -> qsens_core::Result<Vec<CheckRow>> {
    let o = op(cos(), 8, [0.25, 0.25])?;
    let spec = PerturbationSpec::new([0.0; 2], [0.25, 0.25], [1.0, 0.0], [1.0, 0.0])?.with_k_window(3);
    let rho = build_rho0(&spec, o.lattice())?;
    let a = run_series_with(&o, &rho, 5, 1e-4, Parallelism::Sequential)?;
    let b = run_series_with(&o, &rho, 5, 1e-4, Parallelism::Parallel)?;
    let diff = a.raw.iter().flatten().zip(b.raw.iter().flatten()).filter(|(x, y)| x != y).count();
    Ok(vec![row("parallel and sequential traces bitwise equal (differing entries)", diff as f64, 0.0)])
}

const CHECKS: [(&str, Check); 9] = [
    ("hermiticity", hermiticity),
    ("unitarity", unitarity),
    ("cat orientation", cat_orientation),
    ("oracle", oracle),
    ("linearity", linearity),
    ("spectral", spectral),
    ("characteristic", characteristic),
    ("fitting", fitting),
    ("determinism", determinism),
];

pub fn run_checks(options: CheckOptions) -> Vec<CheckRow> {
    let mut rng = StdRng::seed_from_u64(options.seed);
    let mut rows = Vec::new();
    for (name, check) in CHECKS {
        match check(&mut rng, &options) {
            Ok(r) => rows.extend(r),
            Err(e) => rows.push(failed(name, e)),
        }
    }
    rows
}

pub fn table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}  {:<width$}  {:>10.3e}  (tol {:.0e})\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.tolerance
        ));
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", rows.len(), failed));
    out
}
