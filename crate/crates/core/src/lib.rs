//! Poisson- and negative-binomial INGARCH(1,1) count models through their
//! marginalized linear state-space representations.

pub mod coeffs;
pub mod error;
pub mod estimation;
pub mod kernels;
pub mod nb;
pub mod optim;
pub mod panel;
pub mod poisson;
pub mod simulate;
pub mod verify;

pub use coeffs::IngarchCoeffs;
pub use error::{Error, Result};
pub use kernels::{RngStream, SimRng};
