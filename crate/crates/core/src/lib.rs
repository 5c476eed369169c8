//! Confidence regions and error bars for quantum process tomography.
//!
//! The crate is organized bottom-up:
//!
//! - [`qmat`]: dense complex matrices, Hermitian eigensolver, fidelities, Haar sampling.
//! - [`channels`]: Choi matrices, the Stinespring parametrization and channel constructors.
//! - [`tomodata`]: measurement settings, datasets, likelihoods and data simulation.
//! - [`sdpcore`]: a small dense ADMM conic solver.
//! - [`fom`]: diamond distance and entanglement fidelities.
//! - [`walkers`]: Metropolis-Hastings walks over channels and bipartite states, binning analysis.
//! - [`regions`]: histogram fits, quantum error bars and confidence intervals.

pub mod channels;
pub mod fom;
pub mod qmat;
pub mod regions;
pub mod sdpcore;
pub mod tomodata;
pub mod walkers;

pub use qmat::{ComplexMatrix, C64};
