//! Robust Hamilton-Jacobi reachability for systems with learned,
//! uncertain control-affine dynamics.
//!
//! The pipeline: learn an ensemble of control-affine networks
//! ([`ensemble`]), turn its spread into hypercube model-error bounds, solve
//! the avoid variational inequality with the closed-form control/error game
//! ([`hamiltonian`], [`solver`]), and use the resulting value function as a
//! safety controller or least-restrictive filter ([`controller`]).

pub mod controller;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod hamiltonian;
pub mod io;
pub mod render;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
