//! Dense spectral view of the truncated Floquet operator: eigen-decomposition,
//! trace reconstruction from eigenphases, the characteristic-function
//! cross-check of the traces, and a kernel-concentration histogram.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::exec::{pairwise_sum, Parallelism};
use crate::floquet::{FloquetOp, KickFamily};
use crate::lattice::{position_coefficient, ObservableKind, ObservableMatrix, StateVector};
use crate::perturbation::{RhoZero, SectorTerm, TraceEngine};

/// Largest dimension handed to the dense eigensolver by default.
pub const DEFAULT_DENSE_CAP: usize = 4096;
/// Largest eigen-decomposition defect accepted downstream.
pub const DEFECT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    /// `theta_mu` in `(-pi, pi]` with eigenvalue `|lambda| e^{i theta}`, ascending.
    pub eigenphases: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvectors as columns, in eigenphase order.
    pub vectors: DMatrix<Complex64>,
    /// `max(|Q^dag Q - I|, |Q diag(lambda) Q^dag - U|)`, entrywise max.
    pub defect: f64,
    /// `max |1 - |lambda||`.
    pub modulus_defect: f64,
}

impl FloquetSpectrum {
    pub fn dim(&self) -> usize {
        self.eigenphases.len()
    }

    pub fn usable(&self) -> bool {
        self.defect < DEFECT_TOLERANCE
    }

    fn require_usable(&self) -> Result<()> {
        if self.usable() {
            Ok(())
        } else {
            Err(Error::SpectralDefect { defect: self.defect, tolerance: DEFECT_TOLERANCE })
        }
    }
}

fn wrap_phase(theta: f64) -> f64 {
    // into (-pi, pi]
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Eigenvectors of a normal matrix from the commuting Hermitian pair
/// `Re(e^{-i phi} U)`, `Im(e^{-i phi} U)`: the first is diagonalized, then each
/// cluster of equal eigenvalues is resolved with the second.
fn unitary_eigenvectors(u: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    const PHI: f64 = 0.618_033_988_749_894_8;
    const CLUSTER: f64 = 1e-7;
    let rot = u * Complex64::from_polar(1.0, -PHI);
    let ra = rot.adjoint();
    let re = (&rot + &ra) * Complex64::new(0.5, 0.0);
    let im = (&rot - &ra) * Complex64::new(0.0, -0.5);
    let eig = SymmetricEigen::new(re);
    let d = u.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut q = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && values[end] - values[end - 1] < CLUSTER {
            end += 1;
        }
        if end - start > 1 {
            let block = q.columns(start, end - start).into_owned();
            let small = block.adjoint() * &im * &block;
            let inner = SymmetricEigen::new(small);
            let resolved = block * inner.eigenvectors;
            q.columns_mut(start, end - start).copy_from(&resolved);
        }
        start = end;
    }
    q
}

pub fn diagonalize(op: &FloquetOp) -> Result<FloquetSpectrum> {
    diagonalize_with_cap(op, DEFAULT_DENSE_CAP)
}

pub fn diagonalize_with_cap(op: &FloquetOp, cap: usize) -> Result<FloquetSpectrum> {
    let d = op.lattice().dim();
    if d > cap {
        return Err(Error::TooLarge { dim: d, cap });
    }
    let (values, q, defect) = if matches!(op.model().family, KickFamily::Free) {
        (op.free_phases().to_vec(), DMatrix::identity(d, d), 0.0)
    } else {
        let u = op.to_dense()?;
        let q = unitary_eigenvectors(&u);
        let t = q.adjoint() * &u * &q;
        let values: Vec<Complex64> = (0..d).map(|i| t[(i, i)]).collect();
        let ortho = (q.adjoint() * &q - DMatrix::<Complex64>::identity(d, d)).camax();
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values.clone()));
        let recon = (&q * diag * q.adjoint() - &u).camax();
        (values, q, ortho.max(recon))
    };
    let mut order: Vec<usize> = (0..d).collect();
    let phases: Vec<f64> = values.iter().map(|v| wrap_phase(v.arg())).collect();
    order.sort_by(|&a, &b| phases[a].total_cmp(&phases[b]).then(a.cmp(&b)));
    let vectors = DMatrix::from_fn(d, d, |r, c| q[(r, order[c])]);
    let eigenvalues: Vec<Complex64> = order.iter().map(|&i| values[i]).collect();
    let modulus_defect = eigenvalues.iter().map(|v| (1.0 - v.norm()).abs()).fold(0.0, f64::max);
    Ok(FloquetSpectrum {
        eigenphases: order.iter().map(|&i| phases[i]).collect(),
        eigenvalues,
        vectors,
        defect,
        modulus_defect,
    })
}

/// Kernel matrices of one sector term of the perturbation.
#[derive(Debug, Clone)]
pub struct KernelTerm {
    pub term: SectorTerm,
    pub spectrum: FloquetSpectrum,
    /// `<E_mu| rho |E_nu>`.
    pub rho: DMatrix<Complex64>,
    /// `<E_mu| O |E_nu>` for x1, x2, p1, p2; the trace pairs `rho(mu,nu) O(nu,mu)`.
    pub observables: [DMatrix<Complex64>; 4],
    /// Frobenius norm squared of the momentum-basis `rho`.
    pub rho_frobenius_sqr: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralKernel {
    pub terms: Vec<KernelTerm>,
}

/// Eigenbasis kernels for every sector term of `rho` at step `h`.
pub fn spectral_kernel(op: &FloquetOp, rho: &RhoZero, h: f64) -> Result<SpectralKernel> {
    let lattice = op.lattice();
    if lattice != rho.lattice() {
        return Err(Error::LatticeMismatch { expected: lattice.dim(), found: rho.lattice().dim() });
    }
    let mut terms = Vec::new();
    for term in rho.sector_terms(h)? {
        let sop = op.with_sector(term.sector);
        if !sop.preserves_sector(term.sector.beta) {
            return invalid("spectral kernel needs dynamics that keep each sector; the cat map moves this one");
        }
        let spectrum = diagonalize(&sop)?;
        let q = &spectrum.vectors;
        let qa = q.adjoint();
        let rho_m = rho.term_matrix(&term);
        let rho_frobenius_sqr = rho_m.iter().map(|c| c.norm_sqr()).sum();
        let rho_e = &qa * rho_m * q;
        let observables = ObservableKind::ALL.map(|k| {
            let o = ObservableMatrix::new(k, lattice).dense(term.sector.beta);
            &qa * o * q
        });
        terms.push(KernelTerm { term, spectrum, rho: rho_e, observables, rho_frobenius_sqr });
    }
    Ok(SpectralKernel { terms })
}

impl SpectralKernel {
    /// `sum |<E_mu|rho|E_nu>|^2` and the momentum-basis Frobenius norm squared,
    /// summed over sector terms.
    pub fn parseval(&self) -> (f64, f64) {
        let e: f64 = self.terms.iter().map(|t| t.rho.iter().map(|c| c.norm_sqr()).sum::<f64>()).sum();
        let f: f64 = self.terms.iter().map(|t| t.rho_frobenius_sqr).sum();
        (e, f)
    }

    pub fn max_defect(&self) -> f64 {
        self.terms.iter().map(|t| t.spectrum.defect).fold(0.0, f64::max)
    }
}

/// `sum_{mu,nu} rho(mu,nu) O(nu,mu) e^{i (theta_mu - theta_nu) n}` per observable.
///
/// With `U = e^{+i H tau}` and eigenvalues `e^{i theta}`, this is the
/// `e^{-i (E_mu - E_nu) t}` form with `E = -theta` per kick.
pub fn reconstruct_trace(kernel: &SpectralKernel, n: usize) -> Result<[Complex64; 4]> {
    let mut totals = [Complex64::new(0.0, 0.0); 4];
    for t in &kernel.terms {
        t.spectrum.require_usable()?;
        let d = t.spectrum.dim();
        let rot: Vec<Complex64> =
            t.spectrum.eigenphases.iter().map(|th| Complex64::from_polar(1.0, wrap_phase(th * n as f64))).collect();
        for (c, total) in totals.iter_mut().enumerate() {
            let o = &t.observables[c];
            let rows: Vec<Complex64> = (0..d)
                .map(|mu| {
                    let terms: Vec<Complex64> =
                        (0..d).map(|nu| t.rho[(mu, nu)] * o[(nu, mu)] * rot[nu].conj()).collect();
                    pairwise_sum(&terms) * rot[mu]
                })
                .collect();
            *total += pairwise_sum(&rows);
        }
    }
    Ok(totals)
}

/// Kernel-mass histogram against `|theta_mu - theta_nu|` folded to `[0, pi]`.
/// A qualitative concentration diagnostic, not a classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelProfile {
    pub label: &'static str,
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    pub fraction: Vec<f64>,
}

impl KernelProfile {
    /// Number of bins holding at least `min_fraction` of the mass.
    pub fn occupied_bins(&self, min_fraction: f64) -> usize {
        self.fraction.iter().filter(|f| **f >= min_fraction).count()
    }

    /// Fraction of the mass in the first `count` bins.
    pub fn mass_near_zero(&self, count: usize) -> f64 {
        self.fraction.iter().take(count).sum()
    }
}

pub const KERNEL_PROFILE_LABEL: &str = "qualitative kernel-concentration diagnostic (not a classifier)";

pub fn kernel_profile(kernel: &SpectralKernel, bins: usize) -> Result<KernelProfile> {
    if bins < 8 {
        return invalid(format!("kernel profile needs at least 8 bins, got {bins}"));
    }
    let width = PI / bins as f64;
    let mut mass = vec![0.0; bins];
    for t in &kernel.terms {
        let th = &t.spectrum.eigenphases;
        let d = th.len();
        for mu in 0..d {
            for nu in 0..d {
                let r = t.rho[(mu, nu)];
                if r.norm_sqr() == 0.0 {
                    continue;
                }
                let k: f64 = t.observables.iter().map(|o| (r * o[(nu, mu)]).norm()).sum();
                let diff = wrap_phase(th[mu] - th[nu]).abs();
                let b = ((diff / width) as usize).min(bins - 1);
                mass[b] += k;
            }
        }
    }
    let total: f64 = mass.iter().sum();
    let fraction = mass.iter().map(|m| if total > 0.0 { m / total } else { 0.0 }).collect();
    Ok(KernelProfile {
        label: KERNEL_PROFILE_LABEL,
        bin_edges: (0..=bins).map(|i| i as f64 * width).collect(),
        mass,
        fraction,
    })
}

/// `exp(i (mu x + nu p))` on one axis of the window, in the sector with
/// Bloch component `beta`. Returned as a dense `(2K+1)`-square matrix.
fn axis_displacement(cutoff: usize, beta: f64, mu: f64, nu: f64) -> DMatrix<Complex64> {
    let side = 2 * cutoff + 1;
    let k = cutoff as i64;
    let gen = DMatrix::from_fn(side, side, |a, b| {
        let x = position_coefficient(a as i64 - b as i64) * mu;
        if a == b {
            x + Complex64::new(nu * (beta + (a as i64 - k) as f64), 0.0)
        } else {
            x
        }
    });
    let eig = SymmetricEigen::new(gen);
    let v = eig.eigenvectors;
    let phases = nalgebra::DVector::from_iterator(side, eig.eigenvalues.iter().map(|l| Complex64::from_polar(1.0, *l)));
    &v * DMatrix::from_diagonal(&phases) * v.adjoint()
}

/// `<bra| e^{i (mu.x + nu.p)} |ket>` with the windowed generators, which act
/// on separate axes and so factor into per-axis exponentials.
fn displaced_pairing(bra: &StateVector, ket: &StateVector, mu: [f64; 2], nu: [f64; 2]) -> Result<Complex64> {
    let lattice = ket.lattice();
    let side = lattice.side();
    let a1 = axis_displacement(lattice.cutoff(), ket.beta[0], mu[0], nu[0]);
    let a2 = axis_displacement(lattice.cutoff(), ket.beta[1], mu[1], nu[1]);
    let x = DMatrix::from_row_slice(side, side, ket.amplitudes());
    let y = a1 * x * a2.transpose();
    let b = DMatrix::from_row_slice(side, side, bra.amplitudes());
    Ok(b.iter().zip(y.iter()).map(|(p, q)| p.conj() * q).sum())
}

/// Gradient of `G(mu, nu)` at the origin against the direct traces.
///
/// `G` is sampled at `+-e` and `+-2e` on each axis. The five-point derivative
/// is the primary comparison; the two central differences show the order of
/// the stencil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharacteristicCheck {
    pub n: usize,
    pub step: f64,
    /// Five-point gradient `(dG/dmu1, dG/dmu2, dG/dnu1, dG/dnu2)`.
    pub gradient: [Complex64; 4],
    /// `i (Tr{rho_t x}, Tr{rho_t p})` from the direct trace path.
    pub direct: [Complex64; 4],
    /// `max_i |gradient_i - direct_i| / max_i |direct_i|`.
    pub discrepancy: f64,
    /// Same measure for the central difference at step `e`.
    pub central_discrepancy: f64,
    /// Same measure for the central difference at step `2e`.
    pub central_discrepancy_2e: f64,
    /// `central_discrepancy_2e / central_discrepancy`, about 4 at second order.
    pub convergence_ratio: f64,
    /// `G(0, 0) = Tr{rho_t}`.
    pub g0: Complex64,
}

impl CharacteristicCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.discrepancy < tolerance
    }
}

pub fn characteristic_gradient_check(
    op: &FloquetOp,
    rho: &RhoZero,
    n: usize,
    e: f64,
    h: f64,
) -> Result<CharacteristicCheck> {
    if !(e > 0.0 && e.is_finite()) {
        return invalid(format!("stencil step must be positive, got {e}"));
    }
    let mut engine = TraceEngine::new(rho, op, h, Parallelism::default())?;
    for _ in 0..n {
        engine.advance()?;
    }
    let direct_raw = engine.current()?.raw;
    let i = Complex64::new(0.0, 1.0);
    let direct = direct_raw.map(|c| i * c);
    let g = |mu: [f64; 2], nu: [f64; 2]| engine.evaluate(|b, k| displaced_pairing(b, k, mu, nu));
    let along = |c: usize, s: f64| -> Result<Complex64> {
        let mut shift = [0.0; 4];
        shift[c] = s;
        g([shift[0], shift[1]], [shift[2], shift[3]])
    };
    let mut five = [Complex64::new(0.0, 0.0); 4];
    let mut central = [Complex64::new(0.0, 0.0); 4];
    let mut central_2e = [Complex64::new(0.0, 0.0); 4];
    for c in 0..4 {
        let (p1, m1) = (along(c, e)?, along(c, -e)?);
        let (p2, m2) = (along(c, 2.0 * e)?, along(c, -2.0 * e)?);
        central[c] = (p1 - m1) / (2.0 * e);
        central_2e[c] = (p2 - m2) / (4.0 * e);
        five[c] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * e);
    }
    let scale = direct.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let err = |grad: &[Complex64; 4]| grad.iter().zip(&direct).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
    let central_discrepancy = err(&central);
    let central_discrepancy_2e = err(&central_2e);
    Ok(CharacteristicCheck {
        n,
        step: e,
        gradient: five,
        direct,
        discrepancy: err(&five),
        central_discrepancy,
        central_discrepancy_2e,
        convergence_ratio: central_discrepancy_2e / central_discrepancy,
        g0: g([0.0; 2], [0.0; 2])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{build_floquet, Boundary, BuildOptions, KickModel, TrigPolynomial, CAT_MATRIX};
    use crate::lattice::{BlochSector, LatticeSpec};
    use crate::perturbation::{build_rho0, trace_pair, PerturbationSpec};

    fn lattice(k: usize) -> LatticeSpec {
        LatticeSpec::new(k).unwrap()
    }

    fn sector(p: [f64; 2]) -> BlochSector {
        BlochSector::from_momentum(p).unwrap()
    }

    fn cos_op(k: usize, p0: [f64; 2]) -> FloquetOp {
        let m = KickModel::resonant(KickFamily::PositionKick { g: TrigPolynomial::cos_sum(), alpha: 1.0 }, 1).unwrap();
        build_floquet(&m, lattice(k), sector(p0)).unwrap()
    }

    #[test]
    fn free_resonant_spectrum_trivial() {
        let op =
            build_floquet(&KickModel::resonant(KickFamily::Free, 1).unwrap(), lattice(4), sector([0.0; 2])).unwrap();
        let s = diagonalize(&op).unwrap();
        assert!(s.eigenphases.iter().all(|t| *t == 0.0));
        assert_eq!(s.vectors, DMatrix::identity(81, 81));
        assert_eq!(s.defect, 0.0);
    }

    #[test]
    fn free_nonresonant_eigenphases() {
        let l = lattice(3);
        let op = build_floquet(&KickModel::new(KickFamily::Free, 1.0).unwrap(), l, sector([0.0; 2])).unwrap();
        let s = diagonalize(&op).unwrap();
        let mut expect: Vec<f64> = l.modes().map(|k| wrap_phase((k[0] * k[0] + k[1] * k[1]) as f64 / 2.0)).collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in s.eigenphases.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn position_kick_spectrum_unitary() {
        let s = diagonalize(&cos_op(8, [0.0; 2])).unwrap();
        assert!(s.defect < 1e-10, "{}", s.defect);
        assert!(s.modulus_defect < 1e-8);
        assert!(s.eigenphases.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn absorbing_cat_is_reported_not_hidden() {
        let m = KickModel::resonant(KickFamily::CatKick { matrix: CAT_MATRIX }, 1).unwrap();
        let op = build_floquet(&m, lattice(3), sector([0.0; 2])).unwrap();
        let s = diagonalize(&op).unwrap();
        assert!(s.modulus_defect > 0.5);
    }

    #[test]
    fn cap_enforced() {
        let op = cos_op(8, [0.0; 2]);
        assert!(matches!(diagonalize_with_cap(&op, 100), Err(Error::TooLarge { dim: 289, cap: 100 })));
    }

    #[test]
    fn reconstruction_matches_direct() {
        let op = cos_op(6, [0.25, 0.25]);
        let spec = PerturbationSpec::new([0.2, 0.1], [0.25, 0.25], [1.0, 0.5], [0.5, 0.0]).unwrap().with_k_window(3);
        let rho = build_rho0(&spec, lattice(6)).unwrap();
        let h = 1e-3;
        let kernel = spectral_kernel(&op, &rho, h).unwrap();
        for n in [0, 1, 7] {
            let spec_t = reconstruct_trace(&kernel, n).unwrap();
            let direct = trace_pair(&rho, &op, n, h).unwrap().raw;
            for c in 0..4 {
                assert!((spec_t[c] - direct[c]).norm() < 1e-8 * direct[c].norm().max(1.0), "n={n} c={c}");
            }
        }
        let (e, f) = kernel.parseval();
        assert!((e - f).abs() < 1e-10 * f);
    }

    #[test]
    fn cat_kernel_refused_when_defective() {
        let m = KickModel::resonant(KickFamily::CatKick { matrix: CAT_MATRIX }, 1).unwrap();
        let op = build_floquet(&m, lattice(4), sector([0.0; 2])).unwrap();
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], [1.0, 0.0], [0.0; 2]).unwrap().with_k_window(1);
        let rho = build_rho0(&spec, lattice(4)).unwrap();
        let kernel = spectral_kernel(&op, &rho, 1e-4).unwrap();
        assert!(matches!(reconstruct_trace(&kernel, 1), Err(Error::SpectralDefect { .. })));
    }

    #[test]
    fn profiles() {
        let free =
            build_floquet(&KickModel::resonant(KickFamily::Free, 1).unwrap(), lattice(4), sector([0.0; 2])).unwrap();
        let spec = PerturbationSpec::new([0.0; 2], [0.0; 2], [1.0, 0.0], [0.0; 2]).unwrap().with_k_window(2);
        let rho = build_rho0(&spec, lattice(4)).unwrap();
        let p = kernel_profile(&spectral_kernel(&free, &rho, 1e-4).unwrap(), 8).unwrap();
        assert_eq!(p.fraction[0], 1.0);
        assert!(kernel_profile(&spectral_kernel(&free, &rho, 1e-4).unwrap(), 4).is_err());

        let m = KickModel::resonant(KickFamily::CatKick { matrix: CAT_MATRIX }, 1).unwrap();
        let options = BuildOptions { boundary: Some(Boundary::Periodic), ..Default::default() };
        let cat = FloquetOp::build(&m, lattice(8), sector([0.0; 2]), options).unwrap();
        let rho8 = build_rho0(&spec, lattice(8)).unwrap();
        let p = kernel_profile(&spectral_kernel(&cat, &rho8, 1e-4).unwrap(), 8).unwrap();
        assert!(p.occupied_bins(1e-3) >= 4, "{:?}", p.fraction);

        let kick = cos_op(8, [0.25, 0.25]);
        let spec = PerturbationSpec::new([0.0; 2], [0.25, 0.25], [0.0; 2], [1.0, 0.0]).unwrap().with_k_window(4);
        let rho = build_rho0(&spec, lattice(8)).unwrap();
        let p = kernel_profile(&spectral_kernel(&kick, &rho, 1e-3).unwrap(), 8).unwrap();
        assert!(p.mass_near_zero(2) >= 0.9, "{:?}", p.fraction);
    }

    #[test]
    fn characteristic_check_free_and_kicked() {
        let free =
            build_floquet(&KickModel::resonant(KickFamily::Free, 1).unwrap(), lattice(6), sector([0.0; 2])).unwrap();
        let spec = PerturbationSpec::new([0.3, 0.0], [0.0; 2], [1.0, 0.2], [0.0; 2]).unwrap().with_k_window(1);
        let rho = build_rho0(&spec, lattice(6)).unwrap();
        let c = characteristic_gradient_check(&free, &rho, 0, 1e-3, 1e-4).unwrap();
        assert!(c.discrepancy < 1e-6, "{c:?}");
        assert!((c.convergence_ratio - 4.0).abs() < 0.4, "{c:?}");
        let k = cos_op(6, [0.0; 2]);
        let c5 = characteristic_gradient_check(&k, &rho, 5, 1e-3, 1e-4).unwrap();
        assert!(c5.discrepancy < 1e-5, "{c5:?}");
        assert!((c5.g0 - c.g0).norm() < 1e-10);
    }
}
