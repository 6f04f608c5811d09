//! Spin Hamiltonian modeling and spectroscopy analysis for strained
//! tin-vacancy (SnV) centers in diamond.
//!
//! The crate covers:
//! - construction and diagonalization of the 4x4 manifold Hamiltonians
//!   ([`hamiltonian`]),
//! - spectroscopic observables, closed-form splittings, and field rotation
//!   maps ([`transitions`]),
//! - the staged parameter-fitting pipeline with field-uncertainty
//!   propagation ([`fit`]),
//! - magnetic-field calibration from Hahn-echo modulation ([`fieldcal`]),
//! - CPMG coherence-decay analysis ([`coherence`]),
//! - strain-tensor projection into defect frames ([`strain`]),
//! - dataset file parsing and run configuration ([`dataset`], [`config`]),
//! - synthetic fixture generation ([`synthetic`]).

pub mod coherence;
pub mod config;
pub mod dataset;
mod eigen;
pub mod fieldcal;
pub mod fit;
pub mod hamiltonian;
pub mod optimize;
pub mod strain;
pub mod synthetic;
pub mod transitions;

pub use hamiltonian::{
    Basis, FieldSnV, HermitianMatrix4, LevelEnergies, ManifoldParams, PhysicalConstants, SnVModel,
};
pub use transitions::TransitionObservables;
