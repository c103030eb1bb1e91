//! Learning rigid-body robot dynamics from point clouds with a structured
//! Hamiltonian neural ODE, and tracking references with an energy-shaping
//! controller built on the learned model.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod control;
pub mod error;
pub mod geom;
pub mod model;
pub mod ode;
pub mod percept;
pub mod sim;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
