//! Shift-invert imaginary-time evolution for excited eigenstates of spin chains.
//!
//! The crate provides two interchangeable backends for the evolution step:
//! an exact statevector backend (the oracle, `L <= 14`) and a matrix product
//! state backend. [`engine`] drives either one through warm start, adaptive
//! timestep, accept/reject and bond growth; [`shots`] simulates the Hadamard
//! test measurement of the cost function; [`analysis`] holds the diagnostics.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod models;
pub mod mps;
pub mod pauli;
pub mod shots;
pub mod tensor;

pub use error::{Error, Result};
pub use models::{HamiltonianSpec, Model, OperatorTerms};
pub use pauli::{Pauli, PauliString, PauliTerm};

pub use num_complex::Complex64 as C64;
