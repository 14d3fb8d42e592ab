//! Neural construction solver for the min-max heterogeneous capacitated
//! vehicle routing problem, with the decision process, a small autodiff
//! engine, training, inference and classical reference solvers.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod inference;
pub mod mdp;
pub mod model;
pub mod numerics;
pub mod problem;
pub mod seeds;
pub mod training;

pub use error::{Error, Result, ValidationError};
