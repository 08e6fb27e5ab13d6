//! Finite-blocklength bounds for unsourced random access over MIMO
//! quasi-static Rayleigh fading with a random, unknown number of active users.
//!
//! The crate evaluates achievability bounds (active-count estimation, data
//! detection, joint error), converse bounds, minimum energy-per-bit searches
//! and a small Monte-Carlo system simulator used to cross-check the bounds.
//!
//! All probabilities are carried as natural logarithms until reporting.

pub mod converse;
pub mod detection;
pub mod error;
pub mod ka_estimation;
pub mod model;
pub mod randmat;
pub mod simulator;
pub mod specfun;

mod linalg;
mod optim;
mod streams;

pub use error::{Error, Result};
pub use model::{
    ActivityPrior, BoundValue, CodebookSpec, Ensemble, MonteCarloPlan, PriorKind, SystemConfig,
    ValidatedConfig,
};
