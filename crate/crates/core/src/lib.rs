//! Contact-implicit model-predictive control.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: planar rigid-body systems with point contacts and terrain.
//! - [`lcp`]: a path-following solver for residual programs with
//!   complementarity pairs, and implicit differentiation of its solutions.
//! - [`contact`]: nonlinear hard-contact time stepping built on [`lcp`].
//! - [`linearized`]: per-stage linearizations of the contact dynamics about a
//!   reference trajectory and the condensed online solver.
//! - [`trajopt`]: the tracking trajectory optimizer over lifted states.
//! - [`mpc`]: the receding-horizon policy and closed-loop execution.
//! - [`harness`]: references, scenarios, Monte Carlo studies and metrics.

pub mod contact;
pub mod error;
pub mod harness;
pub mod lcp;
pub mod linalg;
pub mod linearized;
pub mod model;
pub mod mpc;
pub mod trajopt;

pub use error::{Error, Result};
