//! Quadrature over the domain, Galerkin assembly, and the safe successive
//! approximation iteration.

pub mod iterate;
pub mod linalg;
pub mod quadrature;
pub mod riccati;
pub mod tensors;

pub use iterate::{
    gsa_unconstrained, linear_feedback, project_controller, sgsa_iterate, ActivityMode, SgsaConfig, SgsaResult,
};
pub use linalg::{solve_linear, LinearSolution};
pub use quadrature::{tensor_gauss_legendre, QuadratureGrid};
pub use riccati::{lqr_gain, lqr_riccati_oracle, quadratic_coefficients};
pub use tensors::{
    assemble_g_tensors, assemble_static, assemble_u_dependent, build_node_cache, GalerkinTensors, NodeCache,
    NodeData,
};
