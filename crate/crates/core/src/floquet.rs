//! One-period Floquet operators `U_F = U_0 U_K` for the three kick families.
//!
//! `U_0 = exp(+i p^2 tau / 2)` is diagonal in the momentum basis. The kick is
//! either absent, multiplication by `exp(i alpha g(x))` (a momentum-space
//! convolution), or the integer lattice map of a cat automorphism. Amplitude
//! that leaves the window is either dropped (absorbing) or folded back
//! (periodic); both channels are accounted in [`LeakageRecord`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fourier::{self, Fft2d};
use crate::lattice::{BlochSector, LatticeSpec, Mode, ObservableKind, ObservableMatrix, StateVector};

type AxisTerms = Vec<(i64, Complex64)>;

pub type IntMatrix = [[i64; 2]; 2];

/// The hyperbolic cat matrix `[[1,1],[1,2]]`.
pub const CAT_MATRIX: IntMatrix = [[1, 1], [1, 2]];

/// Real trigonometric polynomial given by its Fourier coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub terms: Vec<(Mode, Complex64)>,
}

impl TrigPolynomial {
    /// `cos x1 + cos x2`.
    pub fn cos_sum() -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self { terms: vec![([1, 0], h), ([-1, 0], h), ([0, 1], h), ([0, -1], h)] }
    }

    pub fn eval(&self, x: [f64; 2]) -> Complex64 {
        self.terms.iter().map(|(m, c)| c * Complex64::new(0.0, m[0] as f64 * x[0] + m[1] as f64 * x[1]).exp()).sum()
    }

    fn coefficient(&self, m: Mode) -> Complex64 {
        self.terms.iter().filter(|(n, _)| *n == m).map(|(_, c)| *c).sum()
    }

    /// Checks `c_{-m} = conj(c_m)`.
    pub fn validate_real(&self) -> Result<()> {
        for (m, _) in &self.terms {
            let c = self.coefficient(*m);
            let d = self.coefficient([-m[0], -m[1]]);
            if (c - d.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                return invalid(format!("g is not real-valued: c{m:?}={c}, c-m={d}"));
            }
        }
        Ok(())
    }

    /// Splits into constant + axis-1 + axis-2 parts when no mixed modes appear.
    fn separate(&self) -> Option<(f64, AxisTerms, AxisTerms)> {
        let mut c0 = 0.0;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &(m, c) in &self.terms {
            match m {
                [0, 0] => c0 += c.re,
                [m1, 0] => a.push((m1, c)),
                [0, m2] => b.push((m2, c)),
                _ => return None,
            }
        }
        Some((c0, a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KickFamily {
    Free,
    PositionKick { g: TrigPolynomial, alpha: f64 },
    CatKick { matrix: IntMatrix },
}

/// Dynamics of one kick period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KickModel {
    pub family: KickFamily,
    pub tau: f64,
    /// `tau = 4 pi m` for a positive integer `m`.
    pub resonant: bool,
}

impl KickModel {
    pub fn new(family: KickFamily, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return invalid(format!("kick period must be positive, got {tau}"));
        }
        let m = tau / (4.0 * PI);
        let resonant = (m - m.round()).abs() < 1e-12 && m.round() >= 1.0;
        let model = Self { family, tau, resonant };
        model.validate()?;
        Ok(model)
    }

    /// Resonant period `tau = 4 pi m`.
    pub fn resonant(family: KickFamily, m: u32) -> Result<Self> {
        Self::new(family, 4.0 * PI * m as f64)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.family {
            KickFamily::Free => Ok(()),
            KickFamily::PositionKick { g, alpha } => {
                if !alpha.is_finite() {
                    return invalid("kick strength alpha must be finite");
                }
                g.validate_real()
            }
            KickFamily::CatKick { matrix } => {
                if det(matrix) != 1 {
                    return invalid(format!("cat matrix {matrix:?} has determinant {}", det(matrix)));
                }
                Ok(())
            }
        }
    }

    fn resonance_order(&self) -> Option<i64> {
        self.resonant.then(|| (self.tau / (4.0 * PI)).round() as i64)
    }
}

pub fn det(m: &IntMatrix) -> i64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Inverse of a determinant-one integer matrix.
pub fn inverse(m: &IntMatrix) -> IntMatrix {
    [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]
}

pub fn transpose(m: &IntMatrix) -> IntMatrix {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mat_mul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let mut out = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat_pow(m: &IntMatrix, n: u32) -> IntMatrix {
    (0..n).fold([[1, 0], [0, 1]], |acc, _| mat_mul(&acc, m))
}

fn mat_vec(m: &IntMatrix, v: Mode) -> Mode {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn mat_vec_f(m: &IntMatrix, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] as f64 * v[0] + m[0][1] as f64 * v[1], m[1][0] as f64 * v[0] + m[1][1] as f64 * v[1]]
}

/// What happens to amplitude pushed past the window edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Dropped and counted as lost weight.
    Absorbing,
    /// Folded back modulo `2K + 1` and counted as wrapped weight.
    Periodic,
}

/// How the cat kick's lattice map is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CatOrientation {
    /// Pick the candidate among `M, M^-1, M^T, M^-T` that satisfies the
    /// Heisenberg relations; fail if none does.
    #[default]
    Calibrated,
    /// Use the given map unchecked. Test hook for the orientation check.
    Forced(IntMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BuildOptions {
    /// Defaults: periodic for position kicks, absorbing for cat kicks.
    pub boundary: Option<Boundary>,
    pub orientation: CatOrientation,
}

const CALIBRATION_CUTOFF: usize = 6;

/// Truncation accounting for one vector after `step` applications.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LeakageRecord {
    pub step: usize,
    /// Weight dropped outside the window.
    pub lost_weight: f64,
    /// Weight that crossed the window edge and was folded back.
    pub wrapped_weight: f64,
}

impl LeakageRecord {
    /// Total weight affected by truncation.
    pub fn truncation_weight(&self) -> f64 {
        self.lost_weight + self.wrapped_weight
    }

    fn accumulate(&mut self, other: &LeakageRecord) {
        self.step += other.step;
        self.lost_weight += other.lost_weight;
        self.wrapped_weight += other.wrapped_weight;
    }
}

#[derive(Debug, Clone)]
enum KickAction {
    Identity,
    Separable(SeparableKernel),
    Dense(DenseKernel),
    Lattice { map: IntMatrix, inverse: IntMatrix },
}

/// `exp(i alpha g)` for `g = c0 + g1(x1) + g2(x2)`: two 1D convolutions.
#[derive(Debug, Clone)]
struct SeparableKernel {
    phase: Complex64,
    axis: [Vec<Complex64>; 2],
    band: [i64; 2],
}

/// Generic `exp(i alpha g)` applied by FFT on a padded grid.
#[derive(Debug, Clone)]
struct DenseKernel {
    band: [i64; 2],
    fft: Fft2d,
    forward_spectrum: Vec<Complex64>,
    adjoint_spectrum: Vec<Complex64>,
}

/// Floquet operator on a lattice window, immutable after construction.
#[derive(Debug, Clone)]
pub struct FloquetOp {
    model: KickModel,
    lattice: LatticeSpec,
    sector: BlochSector,
    boundary: Boundary,
    free_phases: Vec<Complex64>,
    kick: KickAction,
}

/// `FloquetOp` with default options.
pub fn build_floquet(model: &KickModel, lattice: LatticeSpec, sector: BlochSector) -> Result<FloquetOp> {
    FloquetOp::build(model, lattice, sector, BuildOptions::default())
}

impl FloquetOp {
    pub fn build(model: &KickModel, lattice: LatticeSpec, sector: BlochSector, options: BuildOptions) -> Result<Self> {
        model.validate()?;
        let (kick, default_boundary) = match &model.family {
            KickFamily::Free => (KickAction::Identity, Boundary::Absorbing),
            KickFamily::PositionKick { g, alpha } => (position_kick(g, *alpha, lattice)?, Boundary::Periodic),
            KickFamily::CatKick { matrix } => {
                let map = match options.orientation {
                    CatOrientation::Forced(m) => {
                        if det(&m) != 1 {
                            return invalid("forced cat orientation must have determinant 1");
                        }
                        m
                    }
                    CatOrientation::Calibrated => *matrix,
                };
                (KickAction::Lattice { map, inverse: inverse(&map) }, Boundary::Absorbing)
            }
        };
        let mut op = Self {
            model: model.clone(),
            lattice,
            sector,
            boundary: options.boundary.unwrap_or(default_boundary),
            free_phases: Vec::new(),
            kick,
        };
        op.free_phases = op.phases_for(sector.beta);
        if let (KickFamily::CatKick { matrix }, CatOrientation::Calibrated) = (&model.family, options.orientation) {
            op.calibrate_orientation(matrix)?;
        }
        Ok(op)
    }

    /// Same dynamics with free phases precomputed for another sector.
    pub fn with_sector(&self, sector: BlochSector) -> FloquetOp {
        let mut op = self.clone();
        op.sector = sector;
        op.free_phases = op.phases_for(sector.beta);
        op
    }

    pub fn model(&self) -> &KickModel {
        &self.model
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn sector(&self) -> BlochSector {
        self.sector
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Diagonal of `U_0` in the operator's own sector.
    pub fn free_phases(&self) -> &[Complex64] {
        &self.free_phases
    }

    /// Lattice map used by a cat kick.
    pub fn lattice_map(&self) -> Option<IntMatrix> {
        match &self.kick {
            KickAction::Lattice { map, .. } => Some(*map),
            _ => None,
        }
    }

    /// Maximal momentum displacement of one kick per axis (0 for free and cat).
    pub fn kick_bandwidth(&self) -> [i64; 2] {
        match &self.kick {
            KickAction::Separable(k) => k.band,
            KickAction::Dense(k) => k.band,
            _ => [0, 0],
        }
    }

    /// True when the operator maps every sector to itself.
    pub fn preserves_sector(&self, beta: [f64; 2]) -> bool {
        match &self.kick {
            KickAction::Lattice { map, .. } => {
                let image = mat_vec_f(map, beta);
                image.iter().zip(&beta).all(|(a, b)| (a - a.floor()) == *b)
            }
            _ => true,
        }
    }

    fn phases_for(&self, beta: [f64; 2]) -> Vec<Complex64> {
        let tau = self.model.tau;
        let order = self.model.resonance_order();
        let integral = beta == [0.0, 0.0];
        self.lattice
            .modes()
            .map(|k| {
                if order.is_some() && integral {
                    return Complex64::new(1.0, 0.0);
                }
                let phase = match order {
                    // exp(i 2 pi m (beta + k)^2) with the integer k^2 part removed
                    Some(m) => (0..2)
                        .map(|i| {
                            let b = beta[i];
                            let cross = (2.0 * b * k[i] as f64).rem_euclid(1.0);
                            2.0 * PI * m as f64 * (b * b + cross)
                        })
                        .sum::<f64>(),
                    None => {
                        let p2 = (beta[0] + k[0] as f64).powi(2) + (beta[1] + k[1] as f64).powi(2);
                        (p2 * tau / 2.0).rem_euclid(2.0 * PI)
                    }
                };
                Complex64::from_polar(1.0, phase)
            })
            .collect()
    }

    fn apply_free(&self, v: &mut StateVector, conjugate: bool) {
        let computed;
        let phases = if v.beta == self.sector.beta {
            &self.free_phases
        } else {
            computed = self.phases_for(v.beta);
            &computed
        };
        for (a, p) in v.amplitudes_mut().iter_mut().zip(phases) {
            *a *= if conjugate { p.conj() } else { *p };
        }
    }

    /// One period `U_F v` and the truncation weight of this step.
    pub fn apply(&self, v: &StateVector) -> Result<(StateVector, LeakageRecord)> {
        v.check_lattice(self.lattice)?;
        let (mut out, mut rec) = self.apply_kick(v, false);
        self.apply_free(&mut out, false);
        rec.step = 1;
        Ok((out, rec))
    }

    /// `U_F^dag v`.
    pub fn apply_adjoint(&self, v: &StateVector) -> Result<(StateVector, LeakageRecord)> {
        v.check_lattice(self.lattice)?;
        let mut tmp = v.clone();
        self.apply_free(&mut tmp, true);
        let (out, mut rec) = self.apply_kick(&tmp, true);
        rec.step = 1;
        Ok((out, rec))
    }

    /// `U_F^n v` with the cumulative leakage after each step.
    pub fn evolve(&self, v: &StateVector, steps: usize) -> Result<(StateVector, Vec<LeakageRecord>)> {
        let mut cur = v.clone();
        let mut total = LeakageRecord::default();
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (next, rec) = self.apply(&cur)?;
            total.accumulate(&rec);
            records.push(total);
            cur = next;
        }
        Ok((cur, records))
    }

    fn apply_kick(&self, v: &StateVector, adjoint: bool) -> (StateVector, LeakageRecord) {
        match &self.kick {
            KickAction::Identity => (v.clone(), LeakageRecord::default()),
            KickAction::Separable(k) => self.apply_separable(k, v, adjoint),
            KickAction::Dense(k) => self.apply_dense(k, v, adjoint),
            KickAction::Lattice { map, inverse } => self.apply_lattice_map(if adjoint { inverse } else { map }, v),
        }
    }

    fn wrap(&self, offset: i64) -> Option<usize> {
        // offset in window coordinates [0, side)
        let side = self.lattice.side() as i64;
        if (0..side).contains(&offset) {
            Some(offset as usize)
        } else {
            match self.boundary {
                Boundary::Absorbing => None,
                Boundary::Periodic => Some(offset.rem_euclid(side) as usize),
            }
        }
    }

    fn record_outside(&self, rec: &mut LeakageRecord, weight: f64) {
        match self.boundary {
            Boundary::Absorbing => rec.lost_weight += weight,
            Boundary::Periodic => rec.wrapped_weight += weight,
        }
    }

    fn apply_separable(&self, k: &SeparableKernel, v: &StateVector, adjoint: bool) -> (StateVector, LeakageRecord) {
        let side = self.lattice.side();
        let mut rec = LeakageRecord::default();
        let mut cur = v.amplitudes().to_vec();
        for axis in [1usize, 0] {
            let band = k.band[axis];
            let coeffs = &k.axis[axis];
            let ext_len = side + 2 * band as usize;
            let mut next = vec![Complex64::new(0.0, 0.0); side * side];
            let mut ext = vec![Complex64::new(0.0, 0.0); ext_len];
            for line in 0..side {
                let at = |s: usize| if axis == 1 { line * side + s } else { s * side + line };
                let mut any = false;
                ext.iter_mut().for_each(|e| *e = Complex64::new(0.0, 0.0));
                for s in 0..side {
                    let a = cur[at(s)];
                    if a.re == 0.0 && a.im == 0.0 {
                        continue;
                    }
                    any = true;
                    for (j, c) in coeffs.iter().enumerate() {
                        // coefficient index j <-> m = j - band; adjoint uses conj(u_{-m})
                        let c = if adjoint { coeffs[coeffs.len() - 1 - j].conj() } else { *c };
                        if c.re == 0.0 && c.im == 0.0 {
                            continue;
                        }
                        ext[s + j] += c * a;
                    }
                }
                if !any {
                    continue;
                }
                for (e, val) in ext.iter().enumerate() {
                    if val.re == 0.0 && val.im == 0.0 {
                        continue;
                    }
                    let offset = e as i64 - band;
                    if !(0..side as i64).contains(&offset) {
                        self.record_outside(&mut rec, val.norm_sqr());
                    }
                    if let Some(t) = self.wrap(offset) {
                        next[at(t)] += val;
                    }
                }
            }
            cur = next;
        }
        let phase = if adjoint { k.phase.conj() } else { k.phase };
        if phase != Complex64::new(1.0, 0.0) {
            cur.iter_mut().for_each(|a| *a *= phase);
        }
        let out = StateVector::from_amplitudes(self.lattice, v.beta, cur).expect("same lattice");
        (out, rec)
    }

    fn apply_dense(&self, k: &DenseKernel, v: &StateVector, adjoint: bool) -> (StateVector, LeakageRecord) {
        let side = self.lattice.side();
        let (l1, l2) = k.fft.shape();
        let (b1, b2) = (k.band[0] as usize, k.band[1] as usize);
        let mut buf = vec![Complex64::new(0.0, 0.0); l1 * l2];
        for r in 0..side {
            for c in 0..side {
                buf[(r + b1) * l2 + c + b2] = v.amplitudes()[r * side + c];
            }
        }
        k.fft.forward(&mut buf);
        let spectrum = if adjoint { &k.adjoint_spectrum } else { &k.forward_spectrum };
        for (a, s) in buf.iter_mut().zip(spectrum) {
            *a *= s;
        }
        k.fft.inverse(&mut buf);
        let scale = 1.0 / (l1 * l2) as f64;
        let mut rec = LeakageRecord::default();
        let mut out = StateVector::zeros(self.lattice, v.beta);
        let dst = out.amplitudes_mut();
        for e1 in 0..l1 {
            for e2 in 0..l2 {
                let val = buf[e1 * l2 + e2] * scale;
                let (o1, o2) = (e1 as i64 - b1 as i64, e2 as i64 - b2 as i64);
                let inside = (0..side as i64).contains(&o1) && (0..side as i64).contains(&o2);
                if !inside {
                    self.record_outside(&mut rec, val.norm_sqr());
                }
                if let (Some(t1), Some(t2)) = (self.wrap(o1), self.wrap(o2)) {
                    dst[t1 * side + t2] += val;
                }
            }
        }
        (out, rec)
    }

    fn apply_lattice_map(&self, map: &IntMatrix, v: &StateVector) -> (StateVector, LeakageRecord) {
        let image = mat_vec_f(map, v.beta);
        let shift = [image[0].floor(), image[1].floor()];
        let mut beta = [image[0] - shift[0], image[1] - shift[1]];
        let mut shift = [shift[0] as i64, shift[1] as i64];
        for i in 0..2 {
            if beta[i] >= 1.0 {
                beta[i] = 0.0;
                shift[i] += 1;
            }
        }
        let k = self.lattice.cutoff() as i64;
        let side = self.lattice.side();
        let mut out = StateVector::zeros(self.lattice, beta);
        let mut rec = LeakageRecord::default();
        let src = v.amplitudes();
        let dst = out.amplitudes_mut();
        for (i, a) in src.iter().enumerate() {
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let m = mat_vec(map, self.lattice.mode(i));
            let t = [m[0] + shift[0] + k, m[1] + shift[1] + k];
            let inside = t.iter().all(|x| (0..side as i64).contains(x));
            if !inside {
                self.record_outside(&mut rec, a.norm_sqr());
            }
            if let (Some(t1), Some(t2)) = (self.wrap(t[0]), self.wrap(t[1])) {
                dst[t1 * side + t2] += a;
            }
        }
        (out, rec)
    }

    /// `<bra| U^{dag n} O U^n |ket>` for basis modes in the operator's sector.
    pub fn heisenberg_matrix_element(
        &self,
        bra: Mode,
        obs: &ObservableMatrix,
        ket: Mode,
        steps: usize,
    ) -> Result<Complex64> {
        let beta = self.sector.beta;
        let a = StateVector::basis(self.lattice, beta, bra)?;
        let b = StateVector::basis(self.lattice, beta, ket)?;
        let (a, _) = self.evolve(&a, steps)?;
        let (b, _) = self.evolve(&b, steps)?;
        obs.sandwich(&a, &b)
    }

    /// Dense matrix of `U_F` in the operator's sector.
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        if !self.preserves_sector(self.sector.beta) {
            return invalid("operator does not map its sector to itself; no single matrix");
        }
        let d = self.lattice.dim();
        let mut m = DMatrix::zeros(d, d);
        for c in 0..d {
            let e = StateVector::basis(self.lattice, self.sector.beta, self.lattice.mode(c))?;
            let (col, _) = self.apply(&e)?;
            for (r, a) in col.amplitudes().iter().enumerate() {
                m[(r, c)] = *a;
            }
        }
        Ok(m)
    }

    /// The orientation does not depend on the cutoff, so candidates are
    /// tested on a small probe window.
    fn calibrate_orientation(&mut self, matrix: &IntMatrix) -> Result<()> {
        let candidates = [*matrix, inverse(matrix), transpose(matrix), inverse(&transpose(matrix))];
        let mut probe = self.clone();
        probe.lattice = LatticeSpec::new(self.lattice.cutoff().min(CALIBRATION_CUTOFF))?;
        probe.free_phases = probe.phases_for(probe.sector.beta);
        let mut tried = Vec::new();
        for cand in candidates {
            if tried.contains(&cand) {
                continue;
            }
            tried.push(cand);
            probe.kick = KickAction::Lattice { map: cand, inverse: inverse(&cand) };
            let ok = verify_cat_heisenberg(&probe, 1).map(|r| r.passed()).unwrap_or(false);
            if ok {
                self.kick = probe.kick;
                return Ok(());
            }
        }
        Err(Error::Orientation(format!("no orientation of {matrix:?} reproduces p -> M p and x -> M^-T x")))
    }
}

fn position_kick(g: &TrigPolynomial, alpha: f64, lattice: LatticeSpec) -> Result<KickAction> {
    g.validate_real()?;
    if alpha == 0.0 {
        return Ok(KickAction::Identity);
    }
    if let Some((c0, a, b)) = g.separate() {
        let eval = |terms: &Vec<(i64, Complex64)>, x: f64| -> f64 {
            terms.iter().map(|(m, c)| (c * Complex64::new(0.0, *m as f64 * x).exp()).re).sum()
        };
        let (b1, u1) = fourier::coefficients_1d(|x| Complex64::new(0.0, alpha * eval(&a, x)).exp())?;
        let (b2, u2) = fourier::coefficients_1d(|x| Complex64::new(0.0, alpha * eval(&b, x)).exp())?;
        return Ok(KickAction::Separable(SeparableKernel {
            phase: Complex64::from_polar(1.0, alpha * c0),
            axis: [u1, u2],
            band: [b1, b2],
        }));
    }
    let (band, block) = fourier::coefficients_2d(|x1, x2| Complex64::new(0.0, alpha * g.eval([x1, x2]).re).exp())?;
    let side = lattice.side();
    let (l1, l2) = (side + 2 * band[0] as usize, side + 2 * band[1] as usize);
    let fft = Fft2d::new(l1, l2);
    let w2 = (2 * band[1] + 1) as usize;
    let mut fwd = vec![Complex64::new(0.0, 0.0); l1 * l2];
    let mut adj = vec![Complex64::new(0.0, 0.0); l1 * l2];
    for m1 in -band[0]..=band[0] {
        for m2 in -band[1]..=band[1] {
            let c = block[(m1 + band[0]) as usize * w2 + (m2 + band[1]) as usize];
            let i = m1.rem_euclid(l1 as i64) as usize * l2 + m2.rem_euclid(l2 as i64) as usize;
            let j = (-m1).rem_euclid(l1 as i64) as usize * l2 + (-m2).rem_euclid(l2 as i64) as usize;
            fwd[i] = c;
            adj[j] = c.conj();
        }
    }
    fft.forward(&mut fwd);
    fft.forward(&mut adj);
    Ok(KickAction::Dense(DenseKernel { band, fft, forward_spectrum: fwd, adjoint_spectrum: adj }))
}

/// Result of checking `U^dag p U = M p` and `U^dag e^{i m.x} U = e^{i (M^-1 m).x}`
/// on interior modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeisenbergCheck {
    pub steps: u32,
    pub modes_checked: usize,
    pub momentum_error: f64,
    pub position_error: f64,
}

impl HeisenbergCheck {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn passed(&self) -> bool {
        self.modes_checked > 0 && self.momentum_error <= Self::TOLERANCE && self.position_error <= Self::TOLERANCE
    }
}

/// Verifies the cat Heisenberg relations against the model's matrix `M` on
/// every integral-sector mode whose `steps`-orbit stays inside the window.
pub fn verify_cat_heisenberg(op: &FloquetOp, steps: u32) -> Result<HeisenbergCheck> {
    let KickFamily::CatKick { matrix } = &op.model.family else {
        return invalid("Heisenberg cat check needs a cat kick");
    };
    let lattice = op.lattice;
    let mn = mat_pow(matrix, steps);
    let mn_inv = inverse(&mn);
    let beta = [0.0, 0.0];
    let p = [
        ObservableMatrix::new(ObservableKind::Momentum1, lattice),
        ObservableMatrix::new(ObservableKind::Momentum2, lattice),
    ];
    let mut checked = 0;
    let mut p_err: f64 = 0.0;
    let mut x_err: f64 = 0.0;
    for a in lattice.modes() {
        let start = StateVector::basis(lattice, beta, a)?;
        let (ua, rec) = op.evolve(&start, steps as usize)?;
        if rec.last().is_some_and(|r| r.truncation_weight() > 0.0) {
            continue;
        }
        checked += 1;
        let expect = mat_vec(&mn, a);
        for i in 0..2 {
            let got = p[i].sandwich(&ua, &ua)?;
            p_err = p_err.max((got - Complex64::new(expect[i] as f64, 0.0)).norm());
        }
        // off-diagonal elements of U^dag p U vanish
        if let Some(b) = lattice.modes().find(|b| *b != a && lattice.edge_distance(*b) >= 0) {
            let (ub, _) = op.evolve(&StateVector::basis(lattice, beta, b)?, steps as usize)?;
            for obs in &p {
                p_err = p_err.max(obs.sandwich(&ub, &ua)?.norm());
            }
        }
        // e^{i m.x} |q> = |q + m>: then <U^n(a + M^-n m)| e^{i m.x} |U^n a> has modulus 1
        for m in [[1, 0], [0, 1]] {
            let shift = mat_vec(&mn_inv, m);
            let b = [a[0] + shift[0], a[1] + shift[1]];
            if !lattice.contains(b) {
                continue;
            }
            let (ub, rb) = op.evolve(&StateVector::basis(lattice, beta, b)?, steps as usize)?;
            if rb.last().is_some_and(|r| r.truncation_weight() > 0.0) {
                continue;
            }
            let shifted = translate(&ua, m);
            let overlap = ub.inner(&shifted)?;
            x_err = x_err.max((overlap.norm() - 1.0).abs());
        }
    }
    Ok(HeisenbergCheck { steps, modes_checked: checked, momentum_error: p_err, position_error: x_err })
}

/// `e^{i m.x} v`: a shift of momentum labels by `m`, dropping what leaves the window.
fn translate(v: &StateVector, m: Mode) -> StateVector {
    let lattice = v.lattice();
    let mut out = StateVector::zeros(lattice, v.beta);
    for (i, a) in v.amplitudes().iter().enumerate() {
        let q = lattice.mode(i);
        if let Some(j) = lattice.index([q[0] + m[0], q[1] + m[1]]) {
            out.amplitudes_mut()[j] = *a;
        }
    }
    out
}
