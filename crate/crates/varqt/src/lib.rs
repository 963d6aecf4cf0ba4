//! Statevector simulation and numerical tooling for variational quantum
//! time evolution and ground-state optimization.
//!
//! Qubit `0` is the least significant bit of a basis-state index, so the
//! integer `k` labels the computational basis state `|bin(k)>`.

pub mod apps;
pub mod circuit;
pub mod cli;
pub mod deriv;
pub mod error;
pub mod evolve;
pub mod optimize;
pub mod oracle;
pub mod pauli;
pub mod rng;
pub mod solve;
pub mod state;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Library version echoed into experiment summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
