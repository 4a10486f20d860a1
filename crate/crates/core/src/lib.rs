//! Optimal safe feedback synthesis for control-affine systems.
//!
//! The value function of the barrier-constrained HJB equation is approximated
//! in a polynomial basis by safe Galerkin successive approximation: each
//! iteration solves a linear Galerkin system whose controller applies the
//! closed-form KKT correction wherever the barrier condition binds.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod control;
pub mod cost;
pub mod error;
pub mod galerkin;
pub mod models;
pub mod plot;
pub mod safety;
pub mod sim;
pub mod synthesis;
pub mod textio;
pub mod verify;

pub use error::{Error, Result};
