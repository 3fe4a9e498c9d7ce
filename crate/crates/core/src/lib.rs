//! Trace observables of kicked quantum maps on the 2-torus.
//!
//! The crate builds truncated Floquet operators in a Bloch sector, evolves the
//! perturbed density matrix in the Heisenberg picture, and classifies how the
//! distance `Delta(n)` between the perturbed and unperturbed expectations of
//! `x` and `p` grows with the kick number.

pub mod error;
pub mod exec;
pub mod floquet;
pub mod fourier;
pub mod growth;
pub mod lattice;
pub mod perturbation;
pub mod spectral;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use floquet::{
    build_floquet, Boundary, BuildOptions, CatOrientation, FloquetOp, KickFamily, KickModel, LeakageRecord,
    TrigPolynomial, CAT_MATRIX,
};
pub use lattice::{build_lattice, BlochSector, LatticeSpec, Mode, ObservableKind, ObservableMatrix, StateVector};
