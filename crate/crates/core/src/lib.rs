//! Products of i.i.d. non-negative random matrices acting on the simplex:
//! projective dynamics and the Hennion metric, transfer operators and their
//! spectral quantities, the martingale correction of the walk `S_n`, and
//! Monte Carlo estimators for exit times conditioned on staying positive.

#[cfg(test)]
#[macro_use]
mod testutil;

pub mod error;
pub mod law;
pub mod matrix;
pub mod sim;
pub mod stream;
pub mod transfer;
pub mod validation;

pub use error::{Error, Result};
pub use law::MatrixLaw;
pub use matrix::{PositiveMatrix, SimplexVector};
pub use stream::{MatrixSampler, Sampling};
