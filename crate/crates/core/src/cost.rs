use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::safety::spd_inverse;

/// Running cost `Q(x) + R(u)` with `Q(x) = x^T Q x` and `R(u) = 1/2 u^T R u`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Invalid("Q must be square".into()));
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::Invalid("Q must be symmetric".into()));
        }
        if q.clone().symmetric_eigen().eigenvalues.min() < -1e-12 {
            return Err(Error::Invalid("Q must be positive semi-definite".into()));
        }
        let r_inv = spd_inverse(&r)?;
        Ok(Self { q, r, r_inv })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x))
    }

    pub fn input_cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.r * u))
    }

    pub fn running_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_cost(x) + self.input_cost(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_forms() {
        let c = QuadraticCost::new(DMatrix::identity(2, 2) * 50.0, DMatrix::identity(2, 2) * 2.0).unwrap();
        let x = DVector::from_column_slice(&[1.0, -0.8]);
        assert!((c.state_cost(&x) - 82.0).abs() < 1e-12);
        // 1/2 u^T (2I) u = u^T u
        assert_eq!(c.input_cost(&DVector::from_column_slice(&[1.0, 2.0])), 5.0);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(QuadraticCost::new(DMatrix::identity(1, 1) * -1.0, DMatrix::identity(1, 1)).is_err());
        assert!(QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).is_err());
    }
}
