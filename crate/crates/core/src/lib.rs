//! Learned dynamical systems that are globally exponentially stable by
//! construction.
//!
//! A nominal network `f̂` is projected, state by state, onto the set of
//! velocities along which a learned convex Lyapunov function `V` decays at
//! rate `α`. The projection is a closed-form expression, so the whole model
//! trains like any other network while keeping its stability guarantee for
//! every parameter value.

pub mod cli;
pub mod diff;
pub mod error;
pub mod latent;
pub mod lyapunov;
pub mod nn;
pub mod ode;
pub mod pendulum;
pub mod stable;
pub mod train;

pub use error::{Error, Result};
