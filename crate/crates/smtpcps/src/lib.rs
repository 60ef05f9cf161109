//! Closed-loop simulator and library for covert message transfer through a
//! set-theoretic model predictive control loop.
//!
//! A plant under bounded disturbance is driven by a set-membership controller
//! that, at every step, steers the state into the next set of a precomputed
//! one-step-controllable family. The controller's binary cost choice doubles
//! as a covert transmitter: an eavesdropper that only knows an inflated
//! disturbance bound cannot tell which transitions carry key agreement, while
//! the legitimate receiver can. The crate provides the polytope calculus, the
//! plant and reach-set models, the controller synthesis, the two protocol
//! endpoints, surrogate attackers, and a simulation harness with a CLI.

pub mod cli;
pub mod adversary;
pub mod config;
pub mod controller;
pub mod protocol;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;

pub use error::{Error, Result};
