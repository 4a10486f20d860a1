//! End-to-end synthesis: unconstrained nominal, safe initial controller, SGSA.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::control::{u_min_norm, u_unconstrained, Controller, Plant, ValueFn};
use crate::cost::QuadraticCost;
use crate::error::Result;
use crate::galerkin::{
    build_node_cache, lqr_gain, project_controller, sgsa_iterate, tensor_gauss_legendre, NodeCache, SgsaConfig,
    SgsaResult,
};
use crate::models::{linearize, ControlAffine, DomainBox};
use crate::safety::BarrierSpec;

#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Arc<dyn ControlAffine>,
    pub cost: QuadraticCost,
    pub barrier: Option<BarrierSpec>,
    pub domain: DomainBox,
    pub basis: BasisSet,
    pub sgsa: SgsaConfig,
    /// Gain of the stabilizing start `u = -K x`; LQR on the linearization when absent.
    pub initial_gain: Option<DMatrix<f64>>,
}

impl Problem {
    pub fn plant(&self) -> Plant {
        Plant { model: self.model.clone(), cost: self.cost.clone() }
    }

    pub fn initial_gain(&self) -> Result<DMatrix<f64>> {
        match &self.initial_gain {
            Some(k) => Ok(k.clone()),
            None => {
                let (a, b) = linearize(self.model.as_ref());
                lqr_gain(&a, &b, self.cost.q(), self.cost.r())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub nominal: SgsaResult,
    pub nominal_value: ValueFn,
    /// Projection of the min-norm filtered nominal, the SGSA starting point.
    pub safe_initial: Option<DVector<f64>>,
    pub safe: Option<SgsaResult>,
    pub safe_value: Option<ValueFn>,
    pub plant: Plant,
    pub barrier: Option<BarrierSpec>,
}

impl Synthesis {
    pub fn nominal_controller(&self) -> Controller {
        Controller::Unconstrained { value: self.nominal_value.clone(), plant: self.plant.clone() }
    }

    pub fn safe_controller(&self) -> Option<Controller> {
        let value = self.safe_value.clone()?;
        let barrier = self.barrier.clone()?;
        Some(Controller::SafeOptimal { value, plant: self.plant.clone(), barrier })
    }

    pub fn min_norm_controller(&self) -> Option<Controller> {
        let barrier = self.barrier.clone()?;
        Some(Controller::MinNormFiltered {
            nominal: Box::new(self.nominal_controller()),
            plant: self.plant.clone(),
            barrier,
        })
    }
}

/// Builds the quadrature node cache for a problem.
pub fn problem_cache(problem: &Problem) -> Result<NodeCache> {
    let grid = tensor_gauss_legendre(&problem.domain, problem.sgsa.quad_order)?;
    build_node_cache(&grid, &problem.model, problem.barrier.as_ref(), &problem.basis, &problem.cost)
}

/// Runs the full pipeline. Without a barrier only the nominal is computed.
pub fn synthesize(problem: &Problem) -> Result<Synthesis> {
    problem.sgsa.validate()?;
    let plant = problem.plant();
    let cache = problem_cache(problem)?;
    let gain = problem.initial_gain()?;

    let c_lqr = project_controller(&cache, |node| Ok(-(&gain * &node.x)))?;
    let nominal = sgsa_iterate(&cache.without_barrier(), &c_lqr, &problem.sgsa)?;
    log::info!("nominal: {} iterations, converged = {}", nominal.iterations, nominal.converged);
    let nominal_value = ValueFn::new(problem.basis.clone(), nominal.c.clone())?;

    let Some(barrier) = problem.barrier.clone() else {
        return Ok(Synthesis {
            nominal,
            nominal_value,
            safe_initial: None,
            safe: None,
            safe_value: None,
            plant,
            barrier: None,
        });
    };

    let c0 = project_controller(&cache, |node| {
        let u_nom = u_unconstrained(&nominal_value, &plant, &node.x);
        u_min_norm(&u_nom, &barrier, &plant, &node.x)
    })?;
    let safe = sgsa_iterate(&cache, &c0, &problem.sgsa)?;
    log::info!(
        "safe: {} iterations, converged = {}, final active fraction {:.3}",
        safe.iterations,
        safe.converged,
        safe.active_fraction.last().copied().unwrap_or(0.0)
    );
    let safe_value = ValueFn::new(problem.basis.clone(), safe.c.clone())?;
    Ok(Synthesis {
        nominal,
        nominal_value,
        safe_initial: Some(c0),
        safe: Some(safe),
        safe_value: Some(safe_value),
        plant,
        barrier: Some(barrier),
    })
}
