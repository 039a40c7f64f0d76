//! Distribution primitives shared by both count models: log-pmfs for the
//! Poisson, Binomial and negative-binomial laws, samplers for those plus the
//! Gamma and Beta laws used by the lift couplings, and the random streams.

mod pmf;
mod rng;
mod sample;
pub mod special;

pub use pmf::{binomial_logpmf, nb_logpmf, poisson_logpmf, truncated_support, CountPmfEval};
pub use rng::{RngStream, SimRng};
pub use sample::{sample_beta, sample_binomial, sample_gamma, sample_nb, sample_poisson};
