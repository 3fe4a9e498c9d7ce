//! Truncated momentum lattice on the 2-torus and the position/momentum
//! observables acting on it.
//!
//! Basis functions are `e^{i(beta+k).x} / (2 pi)` with `k` in `[-K, K]^2`,
//! orthonormal in `L^2([-pi, pi)^2)`. Momentum acts diagonally as `beta + k`;
//! position is multiplication by the sawtooth branch `x in [-pi, pi)`, whose
//! matrix elements are the Fourier coefficients [`position_coefficient`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Mode = [i64; 2];

/// Square window `|k_i| <= K` of the integer momentum lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    cutoff: usize,
}

impl LatticeSpec {
    pub fn new(cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return invalid("lattice cutoff K must be at least 1");
        }
        Ok(Self { cutoff })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Modes per axis, `2K + 1`.
    pub fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    /// Hilbert-space dimension `(2K + 1)^2`.
    pub fn dim(&self) -> usize {
        self.side() * self.side()
    }

    pub fn contains(&self, mode: Mode) -> bool {
        let k = self.cutoff as i64;
        mode[0].abs() <= k && mode[1].abs() <= k
    }

    /// Row-major index with axis 1 as the slow index.
    pub fn index(&self, mode: Mode) -> Option<usize> {
        if !self.contains(mode) {
            return None;
        }
        let k = self.cutoff as i64;
        Some(((mode[0] + k) as usize) * self.side() + (mode[1] + k) as usize)
    }

    pub fn mode(&self, index: usize) -> Mode {
        let k = self.cutoff as i64;
        let side = self.side();
        [(index / side) as i64 - k, (index % side) as i64 - k]
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.dim()).map(move |i| self.mode(i))
    }

    /// Distance from `mode` to the nearest window edge (0 on the edge).
    pub fn edge_distance(&self, mode: Mode) -> i64 {
        let k = self.cutoff as i64;
        (k - mode[0].abs()).min(k - mode[1].abs())
    }
}

/// Bloch sector: fractional part `beta in [0,1)^2` of a reference momentum and
/// its integer part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochSector {
    pub beta: [f64; 2],
    pub integer_part: [i64; 2],
}

impl BlochSector {
    /// Splits a real momentum into integer and fractional parts.
    pub fn from_momentum(p: [f64; 2]) -> Result<Self> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return invalid(format!("non-finite momentum {p:?}"));
        }
        let mut beta = [0.0; 2];
        let mut integer_part = [0; 2];
        for i in 0..2 {
            let fl = p[i].floor();
            let mut frac = p[i] - fl;
            let mut int = fl as i64;
            // p slightly below an integer can round frac up to 1.0
            if frac >= 1.0 {
                frac = 0.0;
                int += 1;
            }
            beta[i] = frac;
            integer_part[i] = int;
        }
        Ok(Self { beta, integer_part })
    }

    pub fn momentum(&self) -> [f64; 2] {
        [self.integer_part[0] as f64 + self.beta[0], self.integer_part[1] as f64 + self.beta[1]]
    }

    pub fn is_integral(&self) -> bool {
        self.beta == [0.0, 0.0]
    }
}

/// Builds the lattice and Bloch sector; `beta` is reduced to `[0,1)`.
pub fn build_lattice(cutoff: usize, beta: [f64; 2]) -> Result<(LatticeSpec, BlochSector)> {
    Ok((LatticeSpec::new(cutoff)?, BlochSector::from_momentum(beta)?))
}

/// Fourier coefficient `(1/2pi) int_{-pi}^{pi} x e^{-imx} dx` of the sawtooth.
pub fn position_coefficient(m: i64) -> Complex64 {
    if m == 0 {
        Complex64::new(0.0, 0.0)
    } else {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(0.0, sign / m as f64)
    }
}

/// Amplitudes over the lattice window, tagged with the Bloch parameter of the
/// sector they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub beta: [f64; 2],
    lattice: LatticeSpec,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(lattice: LatticeSpec, beta: [f64; 2]) -> Self {
        Self { beta, lattice, amps: vec![Complex64::new(0.0, 0.0); lattice.dim()] }
    }

    pub fn basis(lattice: LatticeSpec, beta: [f64; 2], mode: Mode) -> Result<Self> {
        let idx = lattice.index(mode).ok_or_else(|| Error::InvalidArgument(format!("mode {mode:?} outside window")))?;
        let mut v = Self::zeros(lattice, beta);
        v.amps[idx] = Complex64::new(1.0, 0.0);
        Ok(v)
    }

    pub fn from_amplitudes(lattice: LatticeSpec, beta: [f64; 2], amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != lattice.dim() {
            return Err(Error::LatticeMismatch { expected: lattice.dim(), found: amps.len() });
        }
        Ok(Self { beta, lattice, amps })
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn amplitude(&self, mode: Mode) -> Complex64 {
        self.lattice.index(mode).map_or(Complex64::new(0.0, 0.0), |i| self.amps[i])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self | other>`, antilinear in `self`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        self.check_same(other)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn sub(&self, other: &StateVector) -> Result<StateVector> {
        self.check_same(other)?;
        let amps = self.amps.iter().zip(&other.amps).map(|(a, b)| a - b).collect();
        Ok(StateVector { beta: self.beta, lattice: self.lattice, amps })
    }

    pub(crate) fn check_lattice(&self, lattice: LatticeSpec) -> Result<()> {
        if self.lattice != lattice {
            return Err(Error::LatticeMismatch { expected: lattice.dim(), found: self.lattice.dim() });
        }
        Ok(())
    }

    fn check_same(&self, other: &StateVector) -> Result<()> {
        other.check_lattice(self.lattice)
    }

    /// Bounding box `[lo1, hi1] x [lo2, hi2]` (window offsets) of the exactly
    /// nonzero amplitudes, or `None` for the zero vector.
    pub fn support(&self) -> Option<SupportBox> {
        let side = self.lattice.side();
        let mut bx: Option<SupportBox> = None;
        for (i, a) in self.amps.iter().enumerate() {
            if a.re != 0.0 || a.im != 0.0 {
                let (r, c) = (i / side, i % side);
                bx = Some(match bx {
                    None => SupportBox { rows: (r, r), cols: (c, c) },
                    Some(b) => SupportBox {
                        rows: (b.rows.0.min(r), b.rows.1.max(r)),
                        cols: (b.cols.0.min(c), b.cols.1.max(c)),
                    },
                });
            }
        }
        bx
    }
}

/// Inclusive offset ranges (0-based, axis 1 = rows) of a vector's support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportBox {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservableKind {
    Position1,
    Position2,
    Momentum1,
    Momentum2,
}

impl ObservableKind {
    pub const ALL: [ObservableKind; 4] =
        [ObservableKind::Position1, ObservableKind::Position2, ObservableKind::Momentum1, ObservableKind::Momentum2];

    pub fn axis(self) -> usize {
        match self {
            ObservableKind::Position1 | ObservableKind::Momentum1 => 0,
            ObservableKind::Position2 | ObservableKind::Momentum2 => 1,
        }
    }

    pub fn is_position(self) -> bool {
        matches!(self, ObservableKind::Position1 | ObservableKind::Position2)
    }
}

/// Structured action of one position or momentum component on a window.
#[derive(Debug, Clone)]
pub struct ObservableMatrix {
    pub kind: ObservableKind,
    lattice: LatticeSpec,
    // c_m for m in [-2K, 2K], offset by 2K
    coeffs: Vec<Complex64>,
}

impl ObservableMatrix {
    pub fn new(kind: ObservableKind, lattice: LatticeSpec) -> Self {
        let k = lattice.cutoff() as i64;
        let coeffs = (-2 * k..=2 * k).map(position_coefficient).collect();
        Self { kind, lattice, coeffs }
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    #[inline]
    fn coeff(&self, m: i64) -> Complex64 {
        self.coeffs[(m + 2 * self.lattice.cutoff() as i64) as usize]
    }

    /// Matrix element `<a|O|b>` in the sector with parameter `beta`.
    pub fn entry(&self, a: Mode, b: Mode, beta: [f64; 2]) -> Complex64 {
        let axis = self.kind.axis();
        let other = 1 - axis;
        if self.kind.is_position() {
            if a[other] != b[other] {
                return Complex64::new(0.0, 0.0);
            }
            self.coeff(a[axis] - b[axis])
        } else if a == b {
            Complex64::new(beta[axis] + a[axis] as f64, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Dense `d x d` matrix in the sector with parameter `beta`.
    pub fn dense(&self, beta: [f64; 2]) -> DMatrix<Complex64> {
        let d = self.lattice.dim();
        DMatrix::from_fn(d, d, |r, c| self.entry(self.lattice.mode(r), self.lattice.mode(c), beta))
    }

    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        v.check_lattice(self.lattice)?;
        let side = self.lattice.side();
        let src = v.amplitudes();
        let mut out = StateVector::zeros(self.lattice, v.beta);
        let dst = out.amplitudes_mut();
        match self.kind {
            ObservableKind::Momentum1 | ObservableKind::Momentum2 => {
                let axis = self.kind.axis();
                for (i, (o, a)) in dst.iter_mut().zip(src).enumerate() {
                    let m = self.lattice.mode(i);
                    *o = a * (v.beta[axis] + m[axis] as f64);
                }
            }
            ObservableKind::Position1 => {
                for r in 0..side {
                    for s in 0..side {
                        let c = self.coeff(r as i64 - s as i64);
                        if c.im == 0.0 && c.re == 0.0 {
                            continue;
                        }
                        for col in 0..side {
                            dst[r * side + col] += c * src[s * side + col];
                        }
                    }
                }
            }
            ObservableKind::Position2 => {
                for row in 0..side {
                    let base = row * side;
                    for r in 0..side {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for s in 0..side {
                            acc += self.coeff(r as i64 - s as i64) * src[base + s];
                        }
                        dst[base + r] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `<bra|O|ket>` evaluated on the support boxes of the two vectors.
    pub fn sandwich(&self, bra: &StateVector, ket: &StateVector) -> Result<Complex64> {
        bra.check_lattice(self.lattice)?;
        ket.check_lattice(self.lattice)?;
        let zero = Complex64::new(0.0, 0.0);
        let (Some(bb), Some(kb)) = (bra.support(), ket.support()) else {
            return Ok(zero);
        };
        let side = self.lattice.side();
        let k = self.lattice.cutoff() as i64;
        let a = bra.amplitudes();
        let b = ket.amplitudes();
        let mut acc = zero;
        match self.kind {
            ObservableKind::Momentum1 | ObservableKind::Momentum2 => {
                let axis = self.kind.axis();
                let rows = (bb.rows.0.max(kb.rows.0), bb.rows.1.min(kb.rows.1));
                let cols = (bb.cols.0.max(kb.cols.0), bb.cols.1.min(kb.cols.1));
                if rows.0 > rows.1 || cols.0 > cols.1 {
                    return Ok(zero);
                }
                for r in rows.0..=rows.1 {
                    for c in cols.0..=cols.1 {
                        let i = r * side + c;
                        let off = if axis == 0 { r } else { c } as i64 - k;
                        // explicit dyad sum keeps the same rounding as `apply`
                        let p = ket.beta[axis] + off as f64;
                        acc += a[i].conj() * (b[i] * p);
                    }
                }
            }
            ObservableKind::Position1 => {
                let cols = (bb.cols.0.max(kb.cols.0), bb.cols.1.min(kb.cols.1));
                if cols.0 > cols.1 {
                    return Ok(zero);
                }
                for c in cols.0..=cols.1 {
                    for r in bb.rows.0..=bb.rows.1 {
                        let ar = a[r * side + c];
                        if ar.re == 0.0 && ar.im == 0.0 {
                            continue;
                        }
                        let mut inner = zero;
                        for s in kb.rows.0..=kb.rows.1 {
                            inner += self.coeff(r as i64 - s as i64) * b[s * side + c];
                        }
                        acc += ar.conj() * inner;
                    }
                }
            }
            ObservableKind::Position2 => {
                let rows = (bb.rows.0.max(kb.rows.0), bb.rows.1.min(kb.rows.1));
                if rows.0 > rows.1 {
                    return Ok(zero);
                }
                for r in rows.0..=rows.1 {
                    let base = r * side;
                    for c in bb.cols.0..=bb.cols.1 {
                        let ac = a[base + c];
                        if ac.re == 0.0 && ac.im == 0.0 {
                            continue;
                        }
                        let mut inner = zero;
                        for s in kb.cols.0..=kb.cols.1 {
                            inner += self.coeff(c as i64 - s as i64) * b[base + s];
                        }
                        acc += ac.conj() * inner;
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// Applies one of the four observables; convenience wrapper.
pub fn apply_observable(obs: &ObservableMatrix, v: &StateVector) -> Result<StateVector> {
    obs.apply(v)
}
