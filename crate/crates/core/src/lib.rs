//! Core-level photoemission spectral functions of small molecular Hamiltonians.
//!
//! Three routes to the same ionization-potential Green's function are provided:
//!
//! - exact or truncated configuration interaction, read out through the Lehmann
//!   representation ([`ci_solver`], [`greens`]);
//! - statistically emulated quantum phase estimation sampling the eigenvalue
//!   distribution of a trial state ([`qpe_sim`]);
//! - real-time coupled-cluster propagation of the core-ionized system with a
//!   cumulant Green's function ([`rt_eom_cc`]).
//!
//! Integrals come in through FCIDUMP files ([`integrals`]); determinants and
//! second-quantized operators live in [`fock_space`].

pub mod ci_solver;
pub mod error;
pub mod fixtures;
pub mod fock_space;
pub mod greens;
pub mod integrals;
pub mod qpe_sim;
pub mod rt_eom_cc;
pub mod sparse;
pub mod units;

pub use error::{Error, Result};
