//! Successive approximation: repeated linear Galerkin solves of the generalized
//! HJB equation, each using the controller induced by the previous iterate.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::cost::QuadraticCost;
use crate::error::{Error, Result};
use crate::galerkin::linalg::solve_linear;
use crate::galerkin::quadrature::QuadratureGrid;
use crate::galerkin::tensors::{
    assemble_g_tensors, assemble_static, assemble_u_dependent, build_node_cache, NodeCache, NodeData,
};
use crate::models::{ControlAffine, ControlVector, StateVector};

/// Coefficient sup-norm above which the iteration is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// How the safety-activity indicator evolves during the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivityMode {
    /// Frozen at the indicator of the initial coefficients.
    Fixed,
    /// Recomputed from each iterate's unconstrained control.
    #[default]
    PerIteration,
}

impl FromStr for ActivityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "per-iteration" => Ok(Self::PerIteration),
            other => Err(Error::Invalid(format!("unknown activity mode `{other}`"))),
        }
    }
}

impl fmt::Display for ActivityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::PerIteration => "per-iteration",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgsaConfig {
    pub quad_order: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub activity_mode: ActivityMode,
}

impl Default for SgsaConfig {
    fn default() -> Self {
        Self { quad_order: 8, max_iter: 200, tol: 1e-8, activity_mode: ActivityMode::PerIteration }
    }
}

impl SgsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        if self.max_iter == 0 || self.quad_order == 0 {
            return Err(Error::Invalid("max_iter and quad_order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SgsaResult {
    pub c: DVector<f64>,
    pub iterations: usize,
    /// `|c^(i) - c^(i-1)|_inf` per iteration
    pub history: Vec<f64>,
    pub converged: bool,
    /// Fraction of nodes on the active branch, per iteration
    pub active_fraction: Vec<f64>,
    /// Largest equilibrated condition estimate among the solves
    pub max_condition: f64,
}

/// Galerkin projection of a fixed controller:
/// `c = (A1 + A2(u))^-1 (b1 + 1/2 b2(u))`.
pub fn project_controller<F>(cache: &NodeCache, control: F) -> Result<DVector<f64>>
where
    F: Fn(&NodeData) -> Result<ControlVector>,
{
    let (a1, b1) = assemble_static(cache);
    let (a2, b2) = assemble_u_dependent(cache, control)?;
    Ok(solve_linear(&(a1 + a2), &(b1 + b2 * 0.5))?.x)
}

/// Runs the safe successive approximation from `c0`.
///
/// Without a barrier in the cache (or with an indicator that stays all-false)
/// every update is the unconstrained Galerkin policy-iteration step.
pub fn sgsa_iterate(cache: &NodeCache, c0: &DVector<f64>, cfg: &SgsaConfig) -> Result<SgsaResult> {
    cfg.validate()?;
    if c0.len() != cache.basis_len {
        return Err(Error::Dimension { expected: cache.basis_len, got: c0.len() });
    }
    let (a1, b1) = assemble_static(cache);
    let mut c = c0.clone();
    let mut activity = cache.activity(&c)?;
    let mut tensors = assemble_g_tensors(cache, &activity)?;
    let mut history = Vec::new();
    let mut active_fraction = Vec::new();
    let mut max_condition: f64 = 0.0;
    let mut converged = false;
    let node_count = cache.nodes.len() as f64;

    for iteration in 1..=cfg.max_iter {
        if cfg.activity_mode == ActivityMode::PerIteration && iteration > 1 {
            let next = cache.activity(&c)?;
            if next != activity {
                activity = next;
                tensors = assemble_g_tensors(cache, &activity)?;
            }
        }
        active_fraction.push(activity.iter().filter(|a| **a).count() as f64 / node_count);

        let a = tensors.system_matrix(&a1, &c);
        let b = tensors.system_rhs(&b1, &c);
        let sol = solve_linear(&a, &b)?;
        max_condition = max_condition.max(sol.condition);
        let norm = sol.x.amax();
        if !norm.is_finite() || norm > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { iteration, norm });
        }
        let step = (&sol.x - &c).amax();
        c = sol.x;
        history.push(step);
        log::trace!("iteration {iteration}: |dc| = {step:e}");
        if step <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(SgsaResult { iterations: history.len(), c, history, converged, active_fraction, max_condition })
}

/// Unconstrained Galerkin successive approximation starting from the
/// stabilizing controller `u0`.
pub fn gsa_unconstrained<F>(
    model: &Arc<dyn ControlAffine>,
    basis: &BasisSet,
    cost: &QuadraticCost,
    grid: &QuadratureGrid,
    u0: F,
    cfg: &SgsaConfig,
) -> Result<SgsaResult>
where
    F: Fn(&StateVector) -> ControlVector,
{
    let cache = build_node_cache(grid, model, None, basis, cost)?;
    let c0 = project_controller(&cache, |node| Ok(u0(&node.x)))?;
    sgsa_iterate(&cache, &c0, cfg)
}

/// Linear state feedback `u = -K x`.
pub fn linear_feedback(gain: &DMatrix<f64>) -> impl Fn(&StateVector) -> ControlVector + '_ {
    move |x| -(gain * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_poly_basis;
    use crate::galerkin::quadrature::tensor_gauss_legendre;
    use crate::galerkin::riccati::{lqr_gain, lqr_riccati_oracle, quadratic_coefficients};
    use crate::models::{DomainBox, LinearSystem, TwoStateExample, ScalarIntegrator};
    use crate::safety::BarrierSpec;
    use approx::assert_relative_eq;

    fn scalar_setup() -> (NodeCache, SgsaConfig) {
        let model: Arc<dyn ControlAffine> = Arc::new(ScalarIntegrator);
        let grid = tensor_gauss_legendre(&DomainBox::symmetric(1, 1.0).unwrap(), 4).unwrap();
        let basis = make_poly_basis(1, 2, 2).unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0)).unwrap();
        (build_node_cache(&grid, &model, None, &basis, &cost).unwrap(), SgsaConfig::default())
    }

    #[test]
    fn scalar_lqr_converges_to_riccati() {
        let (cache, cfg) = scalar_setup();
        let c0 = project_controller(&cache, |n| Ok(-n.x.clone())).unwrap();
        let res = sgsa_iterate(&cache, &c0, &cfg).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.c[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn one_hand_iteration() {
        // For V = c x^2 the Galerkin map is c' = (1 + c^2) / (2 c).
        let (cache, _) = scalar_setup();
        let cfg = SgsaConfig { max_iter: 1, ..SgsaConfig::default() };
        let res = sgsa_iterate(&cache, &DVector::from_element(1, 2.0), &cfg).unwrap();
        assert_relative_eq!(res.c[0], 1.25, epsilon = 1e-12);
        assert!(!res.converged);
    }

    #[test]
    fn optimal_start_is_a_fixed_point() {
        let (cache, cfg) = scalar_setup();
        let res = sgsa_iterate(&cache, &DVector::from_element(1, 1.0), &cfg).unwrap();
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
    }

    #[test]
    fn planar_linear_system_matches_riccati() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 1.0);
        let model: Arc<dyn ControlAffine> = Arc::new(LinearSystem::new(a.clone(), b.clone()).unwrap());
        let grid = tensor_gauss_legendre(&DomainBox::symmetric(2, 1.0).unwrap(), 3).unwrap();
        let basis = make_poly_basis(2, 2, 2).unwrap();
        let cost = QuadraticCost::new(q.clone(), r.clone()).unwrap();
        let k0 = DMatrix::from_row_slice(1, 2, &[0.0, 2.0]);
        let res = gsa_unconstrained(&model, &basis, &cost, &grid, linear_feedback(&k0), &SgsaConfig::default()).unwrap();
        let expected = quadratic_coefficients(&lqr_riccati_oracle(&a, &b, &q, &r).unwrap());
        assert!(res.converged);
        assert_relative_eq!(res.c, expected, epsilon = 1e-6);
    }

    #[test]
    fn inactive_barrier_is_bit_identical_to_unconstrained() {
        let model: Arc<dyn ControlAffine> = Arc::new(TwoStateExample);
        let grid = tensor_gauss_legendre(&DomainBox::symmetric(2, 1.0).unwrap(), 6).unwrap();
        let basis = make_poly_basis(2, 2, 4).unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(2, 2) * 50.0, DMatrix::identity(2, 2) * 2.0).unwrap();
        let (a, b) = crate::models::linearize(model.as_ref());
        let k = lqr_gain(&a, &b, cost.q(), cost.r()).unwrap();
        let cfg = SgsaConfig::default();
        let reference = gsa_unconstrained(&model, &basis, &cost, &grid, linear_feedback(&k), &cfg).unwrap();

        // Obstacle far outside the domain with a huge margin: never active.
        let far = BarrierSpec::circle(&[40.0, 40.0], 1.0, 20.0).unwrap();
        let cache = build_node_cache(&grid, &model, Some(&far), &basis, &cost).unwrap();
        let u0 = linear_feedback(&k);
        let c0 = project_controller(&cache, |n| Ok(u0(&n.x))).unwrap();
        let res = sgsa_iterate(&cache, &c0, &cfg).unwrap();
        assert!(res.active_fraction.iter().all(|f| *f == 0.0));
        assert_eq!(res.c, reference.c);
        assert_eq!(res.history, reference.history);
    }
}
