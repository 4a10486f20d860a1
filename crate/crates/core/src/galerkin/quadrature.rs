use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::{DomainBox, StateVector};

/// Nodes and positive weights of a cubature rule over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<StateVector>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(&StateVector) -> f64>(&self, fun: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * fun(x)).sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre_1d(order: usize) -> Result<Vec<(f64, f64)>> {
    let order = NonZeroUsize::new(order).ok_or_else(|| Error::Invalid("quadrature order must be >= 1".into()))?;
    let rule = GaussLegendre::new(order);
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// Tensor-product Gauss-Legendre rule, exact for polynomials of per-dimension
/// degree up to `2 * order - 1`. The last coordinate varies fastest.
pub fn tensor_gauss_legendre(domain: &DomainBox, order: usize) -> Result<QuadratureGrid> {
    let base = gauss_legendre_1d(order)?;
    let n = domain.dim();
    let total = base.len().pow(n as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let mut x = DVector::zeros(n);
        let mut w = 1.0;
        for d in 0..n {
            let (lo, hi) = (domain.lower()[d], domain.upper()[d]);
            let (t, wt) = base[idx[d]];
            x[d] = 0.5 * (hi - lo) * t + 0.5 * (hi + lo);
            w *= 0.5 * (hi - lo) * wt;
        }
        nodes.push(x);
        weights.push(w);
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < base.len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(QuadratureGrid { nodes, weights })
}
