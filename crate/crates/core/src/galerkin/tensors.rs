//! Per-node precomputation and assembly of the Galerkin integrals.
//!
//! Every integral is a weighted sum over quadrature nodes. The safety-dependent
//! tensors are re-summed from the cached node factors for a given activity
//! indicator, so activity can change between iterations without re-evaluating
//! dynamics, basis or barrier.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::cost::QuadraticCost;
use crate::error::{Error, Result};
use crate::galerkin::quadrature::QuadratureGrid;
use crate::models::{ControlAffine, ControlVector, StateVector};
use crate::safety::{c_s, evaluate_constraint, safety_terms, BarrierSpec, ConstraintData, SafetyTerms};

/// Cached quantities at one quadrature node.
#[derive(Debug, Clone)]
pub struct NodeData {
    pub x: StateVector,
    pub weight: f64,
    /// `Phi(x)`, length N
    pub phi: DVector<f64>,
    /// Jacobian of `Phi`, N x n
    pub grad_phi: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    /// `grad Phi f`, length N
    pub lf_phi: DVector<f64>,
    /// `g^T grad Phi^T`, m x N; column j is `(L_g phi_j)^T`
    pub lg_phi: DMatrix<f64>,
    pub state_cost: f64,
    /// Raw constraint data (present whenever a barrier is configured).
    pub constraint: Option<ConstraintData>,
    /// Derived safety terms; `None` without a barrier or at degenerate nodes.
    pub safety: Option<SafetyTerms>,
}

impl NodeData {
    pub fn is_degenerate(&self) -> bool {
        self.constraint.is_some() && self.safety.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct NodeCache {
    pub nodes: Vec<NodeData>,
    pub state_dim: usize,
    pub input_dim: usize,
    pub basis_len: usize,
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    pub has_barrier: bool,
}

fn map_nodes<T: Send, F>(grid: &QuadratureGrid, fun: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..grid.len()).into_par_iter().map(fun).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..grid.len()).map(fun).collect()
    }
}

pub fn build_node_cache(
    grid: &QuadratureGrid,
    model: &Arc<dyn ControlAffine>,
    barrier: Option<&BarrierSpec>,
    basis: &BasisSet,
    cost: &QuadraticCost,
) -> Result<NodeCache> {
    let total: f64 = grid.weights.iter().sum();
    if grid.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidDomain("quadrature grid has zero measure".into()));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    if basis.dim() != n {
        return Err(Error::Dimension { expected: n, got: basis.dim() });
    }
    if cost.r().nrows() != m {
        return Err(Error::Dimension { expected: m, got: cost.r().nrows() });
    }
    if cost.q().nrows() != n {
        return Err(Error::Dimension { expected: n, got: cost.q().nrows() });
    }
    let nodes: Result<Vec<NodeData>> = map_nodes(grid, |i| {
        let x = grid.nodes[i].clone();
        let phi = basis.eval(&x);
        let grad_phi = basis.grad(&x);
        let f = model.drift(&x);
        let g = model.input_matrix(&x);
        let lf_phi = &grad_phi * &f;
        let lg_phi = g.transpose() * grad_phi.transpose();
        let (constraint, safety) = match barrier {
            Some(spec) => {
                let data = evaluate_constraint(spec, model, &x)?;
                let terms = if data.is_degenerate() { None } else { Some(safety_terms(data.clone(), cost.r())?) };
                (Some(data), terms)
            }
            None => (None, None),
        };
        Ok(NodeData {
            state_cost: cost.state_cost(&x),
            weight: grid.weights[i],
            x,
            phi,
            grad_phi,
            f,
            g,
            lf_phi,
            lg_phi,
            constraint,
            safety,
        })
    })
    .into_iter()
    .collect();
    let nodes = nodes?;
    let degenerate = nodes.iter().filter(|n| n.is_degenerate()).count();
    if degenerate > 0 {
        log::debug!("{degenerate} quadrature nodes have a vanishing constraint gradient");
    }
    Ok(NodeCache {
        nodes,
        state_dim: n,
        input_dim: m,
        basis_len: basis.len(),
        r: cost.r().clone(),
        r_inv: cost.r_inv().clone(),
        has_barrier: barrier.is_some(),
    })
}

impl NodeCache {
    /// Activity indicator for the value function with coefficients `c`: a node is
    /// active when the unconstrained control `-R^-1 g^T grad V` violates the
    /// safety constraint. Degenerate nodes in the active region are an error.
    pub fn activity(&self, c: &DVector<f64>) -> Result<Vec<bool>> {
        if !self.has_barrier {
            return Ok(vec![false; self.nodes.len()]);
        }
        self.nodes
            .iter()
            .map(|node| {
                let Some(data) = &node.constraint else { return Ok(false) };
                let u = -(&self.r_inv * (&node.lg_phi * c));
                let active = c_s(data, &u) < 0.0;
                if active && node.safety.is_none() {
                    return Err(Error::DegenerateHocbf { at: node.x.iter().copied().collect() });
                }
                Ok(active)
            })
            .collect()
    }

    pub fn inactive(&self) -> Vec<bool> {
        vec![false; self.nodes.len()]
    }

    /// Same nodes with all barrier data dropped.
    pub fn without_barrier(&self) -> NodeCache {
        let nodes = self
            .nodes
            .iter()
            .map(|node| NodeData { constraint: None, safety: None, ..node.clone() })
            .collect();
        NodeCache { nodes, has_barrier: false, ..self.clone() }
    }
}

/// `A1 = int Phi f^T grad Phi^T`, `b1 = -int Q Phi`.
pub fn assemble_static(cache: &NodeCache) -> (DMatrix<f64>, DVector<f64>) {
    let nb = cache.basis_len;
    let mut a1 = DMatrix::zeros(nb, nb);
    let mut b1 = DVector::zeros(nb);
    for node in &cache.nodes {
        a1.ger(node.weight, &node.phi, &node.lf_phi, 1.0);
        b1.axpy(-node.weight * node.state_cost, &node.phi, 1.0);
    }
    (a1, b1)
}

/// `A2(u) = int Phi u^T g^T grad Phi^T`, `b2(u) = -int u^T R u Phi` for a
/// controller sampled at the cache nodes.
pub fn assemble_u_dependent<F>(cache: &NodeCache, control: F) -> Result<(DMatrix<f64>, DVector<f64>)>
where
    F: Fn(&NodeData) -> Result<ControlVector>,
{
    let nb = cache.basis_len;
    let mut a2 = DMatrix::zeros(nb, nb);
    let mut b2 = DVector::zeros(nb);
    for node in &cache.nodes {
        let u = control(node)?;
        if u.len() != cache.input_dim {
            return Err(Error::Dimension { expected: cache.input_dim, got: u.len() });
        }
        let lgu = node.lg_phi.transpose() * &u;
        a2.ger(node.weight, &node.phi, &lgu, 1.0);
        b2.axpy(-node.weight * u.dot(&(&cache.r * &u)), &node.phi, 1.0);
    }
    Ok((a2, b2))
}

/// The controller-dependent integrals of the safe update, expressed so that for
/// `u = -(W g^T grad Phi^T c + u_c)` (with `W = Rbar, u_c = u_cbf` on active nodes
/// and `W = R^-1, u_c = 0` elsewhere)
///
/// `A2(u) = -sum_j c_j GA1[j] + GA2` and
/// `b2(u) = -sum_j c_j (Gb1[j] c + Gb2[:, j]) + Gb3`.
#[derive(Debug, Clone)]
pub struct GalerkinTensors {
    pub ga1: Vec<DMatrix<f64>>,
    pub ga2: DMatrix<f64>,
    pub gb1: Vec<DMatrix<f64>>,
    pub gb2: DMatrix<f64>,
    pub gb3: DVector<f64>,
    /// Indicator the tensors were summed with.
    pub activity: Vec<bool>,
}

impl GalerkinTensors {
    pub fn basis_len(&self) -> usize {
        self.gb3.len()
    }

    /// `A^(i) = A1 - sum_j c_j GA1[j] + GA2`
    pub fn system_matrix(&self, a1: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
        let mut a = a1 + &self.ga2;
        for (cj, g) in c.iter().zip(&self.ga1) {
            a -= g * *cj;
        }
        a
    }

    /// `b^(i) = b1 - 1/2 sum_j c_j (Gb1[j] c + Gb2[:, j]) + 1/2 Gb3`
    pub fn system_rhs(&self, b1: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        let mut b = b1 + &self.gb3 * 0.5;
        for (j, (cj, g)) in c.iter().zip(&self.gb1).enumerate() {
            b -= (g * c + self.gb2.column(j)) * (0.5 * cj);
        }
        b
    }
}

pub fn assemble_g_tensors(cache: &NodeCache, activity: &[bool]) -> Result<GalerkinTensors> {
    if activity.len() != cache.nodes.len() {
        return Err(Error::Dimension { expected: cache.nodes.len(), got: activity.len() });
    }
    let nb = cache.basis_len;
    let m = cache.input_dim;
    let mut ga1 = vec![DMatrix::zeros(nb, nb); nb];
    let mut gb1 = vec![DMatrix::zeros(nb, nb); nb];
    let mut ga2 = DMatrix::zeros(nb, nb);
    let mut gb2 = DMatrix::zeros(nb, nb);
    let mut gb3 = DVector::zeros(nb);
    let zero_u = DVector::zeros(m);
    for (node, &active) in cache.nodes.iter().zip(activity) {
        let (w_mat, u_c) = if active {
            let terms = node
                .safety
                .as_ref()
                .ok_or_else(|| Error::DegenerateHocbf { at: node.x.iter().copied().collect() })?;
            (&terms.rbar, &terms.u_cbf)
        } else {
            (&cache.r_inv, &zero_u)
        };
        let d = &node.lg_phi;
        let wd = w_mat * d;
        let pa = d.transpose() * &wd;
        let pb = wd.transpose() * &cache.r * &wd;
        let w = node.weight;
        for j in 0..nb {
            ga1[j].ger(w, &node.phi, &pa.row(j).transpose(), 1.0);
            gb1[j].ger(w, &node.phi, &pb.row(j).transpose(), 1.0);
        }
        if active {
            let du = d.transpose() * u_c;
            ga2.ger(-w, &node.phi, &du, 1.0);
            let cross = wd.transpose() * (&cache.r * u_c);
            gb2.ger(2.0 * w, &node.phi, &cross, 1.0);
            gb3.axpy(-w * u_c.dot(&(&cache.r * u_c)), &node.phi, 1.0);
        }
    }
    Ok(GalerkinTensors { ga1, ga2, gb1, gb2, gb3, activity: activity.to_vec() })
}
