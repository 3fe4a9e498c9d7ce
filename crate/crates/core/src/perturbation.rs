//! The singular perturbation `rho0` and its trace pairing with
//! Heisenberg-evolved position and momentum.
//!
//! In the momentum basis
//! `rho0 = -2 (v1.d/dq0 + v2.d/dp0) sum_k |p0 - k> e^{2ik.q0} <p0 + k|`,
//! so `Tr{rho0 O} = sum_k w_k <p0 + k| O |p0 - k>`. The `q0` derivative is the
//! exact factor `i 2k.v1`; the `p0` derivative is a symmetric finite
//! difference over shifted Bloch sectors. Each sector that enters is a
//! [`SectorTerm`] holding its own dyads and weights.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::{pairwise_sum, Parallelism};
use crate::floquet::FloquetOp;
use crate::lattice::{BlochSector, LatticeSpec, Mode, ObservableKind, ObservableMatrix, StateVector};

/// Default finite-difference step in the Bloch parameter.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// t = 0 components at or below this modulus use the norm fallback.
pub const VANISHING_COMPONENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub q0: [f64; 2],
    pub p0: [f64; 2],
    pub v1: [f64; 2],
    pub v2: [f64; 2],
    /// Dyad cut-off `|k_i| <= k_window`; `None` means `K / 2`.
    pub k_window: Option<usize>,
    pub fd_step: f64,
    /// Richardson-extrapolate the `p0` derivative (adds the `2h` points).
    pub richardson: bool,
}

impl PerturbationSpec {
    pub fn new(q0: [f64; 2], p0: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> Result<Self> {
        let spec = Self { q0, p0, v1, v2, k_window: None, fd_step: DEFAULT_FD_STEP, richardson: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_k_window(mut self, k_window: usize) -> Self {
        self.k_window = Some(k_window);
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.q0, self.p0, self.v1, self.v2].concat();
        if all.iter().any(|x| !x.is_finite()) {
            return invalid("perturbation parameters must be finite");
        }
        if self.direction_norm() == 0.0 {
            return invalid("perturbation direction (v1, v2) must be nonzero");
        }
        if self.has_momentum_part() && !(self.fd_step > 0.0 && self.fd_step < 0.125) {
            return invalid(format!("fd_step must lie in (0, 1/8) when v2 != 0, got {}", self.fd_step));
        }
        Ok(())
    }

    /// `||(v1, v2)||`.
    pub fn direction_norm(&self) -> f64 {
        self.v1.iter().chain(&self.v2).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn has_momentum_part(&self) -> bool {
        self.v2 != [0.0, 0.0]
    }
}

/// One term `<I + k| O |I - k>` with its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dyad {
    pub k: Mode,
    pub bra: Mode,
    pub ket: Mode,
    pub weight: Complex64,
}

/// Dyads evaluated in one Bloch sector (the base `p0` or a shifted copy).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorTerm {
    pub momentum: [f64; 2],
    pub sector: BlochSector,
    pub dyads: Vec<Dyad>,
}

/// Dyad family of the perturbation on a lattice window.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoZero {
    spec: PerturbationSpec,
    lattice: LatticeSpec,
    k_window: usize,
    k_set: Vec<Mode>,
}

pub fn build_rho0(spec: &PerturbationSpec, lattice: LatticeSpec) -> Result<RhoZero> {
    spec.validate()?;
    let cutoff = lattice.cutoff();
    let kw = spec.k_window.unwrap_or(cutoff / 2);
    if kw > cutoff {
        return invalid(format!("k_window {kw} exceeds lattice cutoff {cutoff}"));
    }
    let base = BlochSector::from_momentum(spec.p0)?.integer_part;
    // finite-difference sectors may move the integer part by one on axes with v2 != 0
    let shifts: Vec<Mode> = {
        let r = |i: usize| if spec.v2[i] != 0.0 { -1..=1i64 } else { 0..=0 };
        r(0).flat_map(|a| r(1).map(move |b| [a, b])).collect()
    };
    let kw = kw as i64;
    let mut k_set = Vec::new();
    for k1 in -kw..=kw {
        for k2 in -kw..=kw {
            let ok = shifts.iter().all(|s| {
                let c = [base[0] + s[0], base[1] + s[1]];
                lattice.contains([c[0] + k1, c[1] + k2]) && lattice.contains([c[0] - k1, c[1] - k2])
            });
            if ok {
                k_set.push([k1, k2]);
            }
        }
    }
    if k_set.is_empty() {
        return invalid("no dyad fits inside the lattice window; increase K or move p0");
    }
    Ok(RhoZero { spec: spec.clone(), lattice, k_window: kw as usize, k_set })
}

impl RhoZero {
    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn k_window(&self) -> usize {
        self.k_window
    }

    /// Retained dyad labels `k`.
    pub fn k_set(&self) -> &[Mode] {
        &self.k_set
    }

    fn phase(&self, k: Mode) -> Complex64 {
        let q0 = self.spec.q0;
        Complex64::from_polar(1.0, 2.0 * (k[0] as f64 * q0[0] + k[1] as f64 * q0[1]))
    }

    fn term(&self, momentum: [f64; 2], weight: impl Fn(Mode) -> Complex64) -> Result<SectorTerm> {
        let sector = BlochSector::from_momentum(momentum)?;
        let c = sector.integer_part;
        let dyads = self
            .k_set
            .iter()
            .map(|&k| Dyad { k, bra: [c[0] + k[0], c[1] + k[1]], ket: [c[0] - k[0], c[1] - k[1]], weight: weight(k) })
            .filter(|d| d.weight != Complex64::new(0.0, 0.0))
            .collect();
        Ok(SectorTerm { momentum, sector, dyads })
    }

    /// Sector terms for finite-difference step `h`.
    pub fn sector_terms(&self, h: f64) -> Result<Vec<SectorTerm>> {
        let spec = &self.spec;
        if spec.has_momentum_part() && !(h > 0.0 && h < 0.125) {
            return invalid(format!("finite-difference step must lie in (0, 1/8) when v2 != 0, got {h}"));
        }
        let mut terms = Vec::new();
        if spec.v1 != [0.0, 0.0] {
            let v1 = spec.v1;
            terms.push(self.term(spec.p0, |k| {
                let d = Complex64::new(0.0, 2.0 * (k[0] as f64 * v1[0] + k[1] as f64 * v1[1]));
                -2.0 * d * self.phase(k)
            })?);
        }
        // (step multiple, derivative weight) of the central-difference stencil
        let stencil: Vec<(f64, f64)> = if spec.richardson {
            vec![(1.0, 4.0 / 3.0 / (2.0 * h)), (2.0, -1.0 / 3.0 / (4.0 * h))]
        } else {
            vec![(1.0, 1.0 / (2.0 * h))]
        };
        for axis in 0..2 {
            let v = spec.v2[axis];
            if v == 0.0 {
                continue;
            }
            for &(mult, w) in &stencil {
                for sign in [1.0, -1.0] {
                    let mut p = spec.p0;
                    p[axis] += sign * mult * h;
                    let coeff = -2.0 * v * sign * w;
                    terms.push(self.term(p, |k| coeff * self.phase(k))?);
                }
            }
        }
        Ok(terms)
    }

    /// Dense matrix of the perturbation restricted to one sector term.
    pub fn term_matrix(&self, term: &SectorTerm) -> nalgebra::DMatrix<Complex64> {
        let d = self.lattice.dim();
        let mut m = nalgebra::DMatrix::zeros(d, d);
        for dy in &term.dyads {
            // rho0 = sum w |ket><bra|
            let r = self.lattice.index(dy.ket).expect("window-filtered");
            let c = self.lattice.index(dy.bra).expect("window-filtered");
            m[(r, c)] += dy.weight;
        }
        m
    }
}

/// Four raw traces at one step, with the worst truncation among the evolved
/// basis vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub n: usize,
    /// `Tr{rho0 x1_H}, Tr{rho0 x2_H}, Tr{rho0 p1_H}, Tr{rho0 p2_H}`.
    pub raw: [Complex64; 4],
    pub lost_weight: f64,
    pub wrapped_weight: f64,
    /// Max over evolved vectors of lost + wrapped weight.
    pub leakage: f64,
}

struct Variant {
    op: FloquetOp,
    modes: Vec<Mode>,
    term: SectorTerm,
    pairs: Vec<(usize, usize)>,
}

struct Track {
    variant: usize,
    state: StateVector,
    lost: f64,
    wrapped: f64,
}

/// Incremental evaluation of the trace pairing over `n = 0, 1, 2, ...`.
pub struct TraceEngine {
    variants: Vec<Variant>,
    tracks: Vec<Track>,
    observables: [ObservableMatrix; 4],
    step: usize,
    parallelism: Parallelism,
}

impl TraceEngine {
    pub fn new(rho: &RhoZero, op: &FloquetOp, h: f64, parallelism: Parallelism) -> Result<Self> {
        if rho.lattice != op.lattice() {
            return Err(Error::LatticeMismatch { expected: op.lattice().dim(), found: rho.lattice.dim() });
        }
        let lattice = op.lattice();
        let mut variants = Vec::new();
        let mut tracks = Vec::new();
        for term in rho.sector_terms(h)? {
            let mut modes: Vec<Mode> = Vec::new();
            let slot = |m: Mode, modes: &mut Vec<Mode>| match modes.iter().position(|x| *x == m) {
                Some(i) => i,
                None => {
                    modes.push(m);
                    modes.len() - 1
                }
            };
            let pairs: Vec<(usize, usize)> =
                term.dyads.iter().map(|d| (slot(d.bra, &mut modes), slot(d.ket, &mut modes))).collect();
            let offset = tracks.len();
            for &m in &modes {
                tracks.push(Track {
                    variant: variants.len(),
                    state: StateVector::basis(lattice, term.sector.beta, m)?,
                    lost: 0.0,
                    wrapped: 0.0,
                });
            }
            let pairs = pairs.into_iter().map(|(a, b)| (a + offset, b + offset)).collect();
            variants.push(Variant { op: op.with_sector(term.sector), modes, term, pairs });
        }
        let observables = ObservableKind::ALL.map(|k| ObservableMatrix::new(k, lattice));
        Ok(Self { variants, tracks, observables, step: 0, parallelism })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Number of evolved basis vectors.
    pub fn vector_count(&self) -> usize {
        self.variants.iter().map(|v| v.modes.len()).sum()
    }

    /// Traces at the current step.
    pub fn current(&self) -> Result<TracePoint> {
        let jobs: Vec<(usize, usize)> =
            self.variants.iter().enumerate().flat_map(|(vi, v)| (0..v.pairs.len()).map(move |j| (vi, j))).collect();
        let contributions = self.parallelism.map(&jobs, |&(vi, j)| -> Result<[Complex64; 4]> {
            let v = &self.variants[vi];
            let (a, b) = v.pairs[j];
            let w = v.term.dyads[j].weight;
            let (bra, ket) = (&self.tracks[a].state, &self.tracks[b].state);
            let mut out = [Complex64::new(0.0, 0.0); 4];
            for (o, obs) in out.iter_mut().zip(&self.observables) {
                *o = w * obs.sandwich(bra, ket)?;
            }
            Ok(out)
        });
        let contributions = contributions.into_iter().collect::<Result<Vec<_>>>()?;
        let mut raw = [Complex64::new(0.0, 0.0); 4];
        for (c, r) in raw.iter_mut().enumerate() {
            let column: Vec<Complex64> = contributions.iter().map(|x| x[c]).collect();
            *r = pairwise_sum(&column);
        }
        let lost = self.tracks.iter().map(|t| t.lost).fold(0.0, f64::max);
        let wrapped = self.tracks.iter().map(|t| t.wrapped).fold(0.0, f64::max);
        let leakage = self.tracks.iter().map(|t| t.lost + t.wrapped).fold(0.0, f64::max);
        Ok(TracePoint { n: self.step, raw, lost_weight: lost, wrapped_weight: wrapped, leakage })
    }

    /// `sum_dyads w f(U^n bra, U^n ket)` at the current step, for an arbitrary
    /// sesquilinear pairing `f`.
    pub fn evaluate<F>(&self, f: F) -> Result<Complex64>
    where
        F: Fn(&StateVector, &StateVector) -> Result<Complex64> + Sync + Send,
    {
        let jobs: Vec<(usize, usize)> =
            self.variants.iter().enumerate().flat_map(|(vi, v)| (0..v.pairs.len()).map(move |j| (vi, j))).collect();
        let parts = self.parallelism.map(&jobs, |&(vi, j)| {
            let v = &self.variants[vi];
            let (a, b) = v.pairs[j];
            Ok(v.term.dyads[j].weight * f(&self.tracks[a].state, &self.tracks[b].state)?)
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&parts))
    }

    /// Applies one more period to every tracked vector.
    pub fn advance(&mut self) -> Result<()> {
        let variants = &self.variants;
        let results = self.parallelism.map_mut(&mut self.tracks, |t| -> Result<()> {
            let (next, rec) = variants[t.variant].op.apply(&t.state)?;
            t.state = next;
            t.lost += rec.lost_weight;
            t.wrapped += rec.wrapped_weight;
            Ok(())
        });
        results.into_iter().collect::<Result<Vec<_>>>()?;
        self.step += 1;
        Ok(())
    }

    /// Trace points for `n = current..=steps`.
    pub fn run_to(&mut self, steps: usize) -> Result<Vec<TracePoint>> {
        let mut out = Vec::new();
        loop {
            out.push(self.current()?);
            if self.step >= steps {
                return Ok(out);
            }
            self.advance()?;
        }
    }
}

/// `Tr{rho0 O_H(n)}` for the four observables, with step `h` for the `p0`
/// derivative.
pub fn trace_pair(rho: &RhoZero, op: &FloquetOp, n: usize, h: f64) -> Result<TracePoint> {
    let mut engine = TraceEngine::new(rho, op, h, Parallelism::default())?;
    for _ in 0..n {
        engine.advance()?;
    }
    engine.current()
}

/// Componentwise ratio to the t = 0 traces. A component whose t = 0 value is
/// at most [`VANISHING_COMPONENT`] in modulus is divided by the norm of the
/// whole t = 0 vector instead.
pub fn normalize(raw0: &[Complex64; 4], raw: &[Complex64; 4]) -> Result<[Complex64; 4]> {
    let norm0 = raw0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm0.is_nan() || norm0 <= VANISHING_COMPONENT {
        return Err(Error::DegeneratePerturbation(format!(
            "t = 0 traces vanish (norm {norm0:e}); choose another direction or window"
        )));
    }
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for i in 0..4 {
        out[i] = if raw0[i].norm() > VANISHING_COMPONENT { raw[i] / raw0[i] } else { raw[i] / norm0 };
    }
    Ok(out)
}

/// Normalized traces at step `n`, using the spec's finite-difference step.
pub fn normalized_trace(rho: &RhoZero, op: &FloquetOp, n: usize) -> Result<[Complex64; 4]> {
    let mut engine = TraceEngine::new(rho, op, rho.spec.fd_step, Parallelism::default())?;
    let t0 = engine.current()?;
    for _ in 0..n {
        engine.advance()?;
    }
    normalize(&t0.raw, &engine.current()?.raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{build_floquet, KickFamily, KickModel, TrigPolynomial, CAT_MATRIX};
    use std::f64::consts::PI;

    fn lattice(k: usize) -> LatticeSpec {
        LatticeSpec::new(k).unwrap()
    }

    fn op(family: KickFamily, k: usize, p0: [f64; 2]) -> FloquetOp {
        let model = KickModel::resonant(family, 1).unwrap();
        build_floquet(&model, lattice(k), BlochSector::from_momentum(p0).unwrap()).unwrap()
    }

    fn cos_family() -> KickFamily {
        KickFamily::PositionKick { g: TrigPolynomial::cos_sum(), alpha: 1.0 }
    }

    #[test]
    fn zero_direction_rejected() {
        assert!(PerturbationSpec::new([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]).is_err());
    }

    #[test]
    fn window_too_small_rejected() {
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], [1.0, 0.0], [0.0; 2]).unwrap().with_k_window(5);
        assert!(build_rho0(&spec, lattice(3)).is_err());
    }

    #[test]
    fn dyad_count_and_position_weights() {
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], [1.0, 0.0], [0.0; 2]).unwrap().with_k_window(2);
        let rho = build_rho0(&spec, lattice(6)).unwrap();
        assert_eq!(rho.k_set().len(), 25);
        let terms = rho.sector_terms(1e-4).unwrap();
        assert_eq!(terms.len(), 1);
        for d in &terms[0].dyads {
            assert_eq!(d.weight, Complex64::new(0.0, -4.0 * d.k[0] as f64));
            assert_ne!(d.k[0], 0);
            assert_eq!(d.bra, [d.k[0], d.k[1]]);
            assert_eq!(d.ket, [-d.k[0], -d.k[1]]);
        }
    }

    #[test]
    fn h_zero_with_momentum_part_rejected() {
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], [0.0; 2], [1.0, 0.0]).unwrap();
        let rho = build_rho0(&spec, lattice(4)).unwrap();
        let f = op(KickFamily::Free, 4, [0.0; 2]);
        assert!(trace_pair(&rho, &f, 0, 0.0).is_err());
        let mut bad = spec.clone();
        bad.fd_step = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn t0_traces_proportional_to_direction() {
        // t = 0, p0 = 0: the x-traces follow v1 with the window constant 4 kw,
        // the p-traces follow v2 with the constant -2 of the k = 0 dyad
        let kw = 3;
        let l = lattice(8);
        let f = op(KickFamily::Free, 8, [0.0; 2]);
        let v1 = [0.6, -0.3];
        let v2 = [0.2, 0.9];
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], v1, v2).unwrap().with_k_window(kw);
        let rho = build_rho0(&spec, l).unwrap();
        let t = trace_pair(&rho, &f, 0, 1e-3).unwrap();
        let c = (4 * kw) as f64;
        let expect = [v1[0] * c, v1[1] * c, -2.0 * v2[0], -2.0 * v2[1]];
        for (got, want) in t.raw.iter().zip(expect) {
            assert!((got - Complex64::new(want, 0.0)).norm() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn free_resonant_traces_constant() {
        let f = op(KickFamily::Free, 10, [0.0; 2]);
        let spec = PerturbationSpec::new([0.3, -0.2], [0.0; 2], [1.0, 0.5], [0.0; 2]).unwrap();
        let rho = build_rho0(&spec, lattice(10)).unwrap();
        let mut engine = TraceEngine::new(&rho, &f, 1e-4, Parallelism::Sequential).unwrap();
        let pts = engine.run_to(6).unwrap();
        for p in &pts {
            assert_eq!(p.raw, pts[0].raw);
            assert_eq!(p.leakage, 0.0);
        }
        // p-traces vanish at t = 0 for a pure v1 perturbation
        let n = normalized_trace(&rho, &f, 3).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        assert_eq!(n, [one, one, zero, zero]);
    }

    #[test]
    fn cat_momentum_traces_follow_matrix_power() {
        let c = op(KickFamily::CatKick { matrix: CAT_MATRIX }, 32, [0.0; 2]);
        let spec = PerturbationSpec::new([0.4, 0.1], [0.0; 2], [0.0; 2], [1.0, 0.3])
            .unwrap()
            .with_k_window(1)
            .with_fd_step(1e-3);
        let rho = build_rho0(&spec, lattice(32)).unwrap();
        let mut engine = TraceEngine::new(&rho, &c, 1e-3, Parallelism::Sequential).unwrap();
        let pts = engine.run_to(3).unwrap();
        let m = [[1.0, 1.0], [1.0, 2.0]];
        for w in pts.windows(2) {
            let p = [w[0].raw[2], w[0].raw[3]];
            let q = [w[1].raw[2], w[1].raw[3]];
            for i in 0..2 {
                let e = p[0] * m[i][0] + p[1] * m[i][1];
                assert!((q[i] - e).norm() < 1e-8 * (1.0 + e.norm()), "{q:?} vs M {p:?}");
            }
        }
    }

    #[test]
    fn linear_in_direction() {
        let k = op(cos_family(), 8, [0.25, 0.25]);
        let base = PerturbationSpec::new([0.1, 0.2], [0.25, 0.25], [1.0, 0.0], [0.0; 2]).unwrap().with_k_window(2);
        let mut doubled = base.clone();
        doubled.v1 = [2.0, 0.0];
        let a = trace_pair(&build_rho0(&base, lattice(8)).unwrap(), &k, 3, 1e-3).unwrap();
        let b = trace_pair(&build_rho0(&doubled, lattice(8)).unwrap(), &k, 3, 1e-3).unwrap();
        for i in 0..4 {
            assert!((b.raw[i] - 2.0 * a.raw[i]).norm() <= 1e-12 * (1.0 + a.raw[i].norm()));
        }
    }

    #[test]
    fn full_period_shift_of_q0_is_invisible() {
        let k = op(cos_family(), 8, [0.25, 0.25]);
        let a = PerturbationSpec::new([0.3, -0.4], [0.25, 0.25], [0.4, 1.0], [0.0; 2]).unwrap().with_k_window(2);
        let mut b = a.clone();
        b.q0[0] += PI;
        let ta = trace_pair(&build_rho0(&a, lattice(8)).unwrap(), &k, 2, 1e-3).unwrap();
        let tb = trace_pair(&build_rho0(&b, lattice(8)).unwrap(), &k, 2, 1e-3).unwrap();
        for i in 0..4 {
            assert!((ta.raw[i] - tb.raw[i]).norm() < 1e-12 * (1.0 + ta.raw[i].norm()));
        }
    }

    #[test]
    fn traces_real_without_momentum_part() {
        let k = op(cos_family(), 8, [0.0; 2]);
        let spec = PerturbationSpec::new([0.7, 0.2], [0.0; 2], [1.0, -0.5], [0.0; 2]).unwrap().with_k_window(3);
        let t = trace_pair(&build_rho0(&spec, lattice(8)).unwrap(), &k, 4, 1e-4).unwrap();
        for c in t.raw {
            assert!(c.im.abs() < 1e-10, "{c}");
        }
    }

    #[test]
    fn finite_difference_is_second_order() {
        let k = op(cos_family(), 10, [0.25, 0.25]);
        let spec = PerturbationSpec::new([0.0; 2], [0.25, 0.25], [0.0; 2], [1.0, 0.0]).unwrap().with_k_window(2);
        let rho = build_rho0(&spec, lattice(10)).unwrap();
        let at = |h: f64| trace_pair(&rho, &k, 2, h).unwrap().raw[0];
        let (a, b, c) = (at(4e-3), at(2e-3), at(1e-3));
        let ratio = (a - b).norm() / (b - c).norm();
        assert!((ratio - 4.0).abs() < 0.8, "Richardson ratio {ratio}");
    }

    #[test]
    fn richardson_removes_leading_error() {
        let k = op(cos_family(), 10, [0.25, 0.25]);
        let mut spec = PerturbationSpec::new([0.0; 2], [0.25, 0.25], [0.0; 2], [1.0, 0.0]).unwrap().with_k_window(2);
        let rho = build_rho0(&spec, lattice(10)).unwrap();
        let reference = trace_pair(&rho, &k, 2, 1e-5).unwrap().raw[0];
        let plain = trace_pair(&rho, &k, 2, 4e-3).unwrap().raw[0];
        spec.richardson = true;
        let rich = trace_pair(&build_rho0(&spec, lattice(10)).unwrap(), &k, 2, 4e-3).unwrap().raw[0];
        assert!((rich - reference).norm() < 0.1 * (plain - reference).norm());
    }

    #[test]
    fn normalization_rules() {
        let one = Complex64::new(1.0, 0.0);
        let z = Complex64::new(0.0, 0.0);
        let raw0 = [Complex64::new(2.0, 0.0), z, Complex64::new(0.0, 4.0), z];
        let n = normalize(&raw0, &raw0).unwrap();
        assert_eq!(n, [one, z, one, z]);
        let later = [Complex64::new(4.0, 0.0), Complex64::new(0.0, 9.0), z, z];
        let m = normalize(&raw0, &later).unwrap();
        let norm0 = 20f64.sqrt();
        assert_eq!(m[1], Complex64::new(0.0, 9.0 / norm0));
        assert!(matches!(normalize(&[z; 4], &later), Err(Error::DegeneratePerturbation(_))));
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let k = op(cos_family(), 8, [0.25, 0.25]);
        let spec = PerturbationSpec::new([0.2, 0.0], [0.25, 0.25], [0.3, 0.0], [1.0, 0.0]).unwrap().with_k_window(2);
        let rho = build_rho0(&spec, lattice(8)).unwrap();
        let a = TraceEngine::new(&rho, &k, 1e-3, Parallelism::Sequential).unwrap().run_to(3).unwrap();
        let b = TraceEngine::new(&rho, &k, 1e-3, Parallelism::Parallel).unwrap().run_to(3).unwrap();
        assert_eq!(a, b);
    }
}
