//! Exact-diagonalization laboratory for gap persistence of weakly interacting lattice fermions.

pub mod correlations;
pub mod covariance;
pub mod error;
pub mod fock;
pub mod grassmann;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod normalorder;
pub mod onebody;
pub mod par;
pub mod quadrature;
pub mod spectra;
pub mod treeexp;
pub mod verify;

pub use error::{Error, Result};
