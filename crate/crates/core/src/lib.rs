//! Discrete Hamilton-Jacobi-Bellman Dirichlet problems.
//!
//! The crate covers operator modelling, monotone finite differences, policy
//! iteration and monotone solvers, principal half-eigenvalues, and the
//! solution census of problems of the form `F[u] = h + tφ`.

pub mod error;
pub mod grid;
pub mod linalg;
pub mod discretize;
pub mod solvers;
pub mod spectral;
pub mod ambrosetti_prodi;
pub mod harness;
pub mod operator;

pub use error::{HjbError, Result};

use serde::{Deserialize, Serialize};

/// Sign selector for half-eigenvalues and Pucci extremal operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}
