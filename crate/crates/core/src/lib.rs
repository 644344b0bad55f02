//! Numerics for driven, isolated spin-1/2 Heisenberg ladders.
//!
//! The crate covers the full pipeline used to test the quantum Jarzynski
//! relation for pure, energy-filtered initial states:
//!
//! - [`lattice`]: the ladder Hamiltonian and the staggered leg field, applied
//!   matrix-free on the `S^z` product basis.
//! - [`statevec`]: state vectors, Haar-random sampling, deterministic
//!   reductions and the binary checkpoint format.
//! - [`chebyshev`]: Chebyshev expansion of the Gaussian energy filter
//!   `exp(-a (H - E)^2 / 4)`.
//! - [`evolve`]: the symmetric second-order product formula, split into
//!   `S^z`-conserving exchange layers (default) or x/y/z term groups, and the
//!   triangular field protocol.
//! - [`spectral`]: density of states and local density of states from
//!   autocorrelation functions.
//! - [`work`]: inverse-temperature fits, exponentiated work averages, the
//!   fictitious shifted distribution and finite-size scaling.
//! - [`oracle`]: dense exact diagonalization for small ladders, used to check
//!   every other module.
//!
//! All energies and times are in units of the leg coupling, with `hbar = 1`.

pub mod capacity;
pub mod chebyshev;
pub mod error;
pub mod evolve;
pub mod lattice;
pub mod oracle;
pub mod spectral;
pub mod statevec;
pub mod work;

pub use error::{Error, Result};
pub use lattice::{FieldProtocol, LadderSpec, SiteIndex};
pub use statevec::StateVector;

pub use num_complex::Complex64;
