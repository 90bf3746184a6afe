//! Learning-augmented receding-horizon control.
//!
//! The crate implements a confidence-weighted MPC stack: plants and
//! prediction streams ([`model`]), closed-form linear-quadratic machinery
//! ([`lqc`]), a direct-shooting trajectory optimizer for constrained
//! nonlinear plants ([`trajopt`]), online confidence learning with delayed
//! feedback ([`confidence`]), the controller zoo ([`policies`]), and the
//! closed-loop simulation and metrics layer ([`sim`]).
//!
//! The crate is `no_std`-compatible (`default-features = false`); the
//! default `std` feature only switches scalar math and RNG plumbing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod confidence;
pub mod lqc;
mod math;
pub mod model;
pub mod noise;
#[cfg(feature = "test-oracles")]
pub mod oracles;
pub mod policies;
pub mod sim;
pub mod trajopt;

pub use nalgebra::{DMatrix, DVector};
