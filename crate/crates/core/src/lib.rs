//! Policy search by annealed Metropolis-Hastings sampling of policy
//! parameters from the posterior conditioned on optimality, with a REINFORCE
//! baseline, a random tabular MDP and a cart-pole simulator.
//!
//! The chain targets `prior(theta) * exp(r(theta) / T)` where `r` is an
//! on-policy utility estimate and `T` cools geometrically, so the mass
//! concentrates on the utility maximizer as `T -> 0`.

// `!(x > 0.0)` checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod policy;
pub mod reinforce;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
