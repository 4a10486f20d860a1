//! Stabilizing solution of the algebraic Riccati equation for the cost
//! `x^T Q x + 1/2 u^T R u`, used as an oracle for the Galerkin iteration.
//!
//! With `V = x^T P x` and `u = -R^-1 B^T grad V = -2 R^-1 B^T P x` the HJB
//! equation reduces to `A^T P + P A - 2 P B R^-1 B^T P + Q = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::safety::spd_inverse;

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..100 {
        let inv = z.clone().try_inverse()?;
        let det = z.determinant().abs();
        let scale = if det > 0.0 && det.is_finite() { det.powf(-1.0 / dim) } else { 1.0 };
        let next = (&z * scale + inv / scale) * 0.5;
        let change = (&next - &z).amax();
        z = next;
        if change <= 1e-13 * z.amax().max(1.0) {
            return Some(z);
        }
    }
    None
}

pub fn lqr_riccati_oracle(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Invalid("inconsistent Riccati data dimensions".into()));
    }
    let s = b * spd_inverse(r)? * b.transpose() * 2.0;
    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&s));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let w = matrix_sign(&ham).ok_or(Error::NotStabilizable)?;
    // The stable invariant subspace [I; P] lies in the kernel of W + I.
    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).map_err(|_| Error::NotStabilizable)?;
    let p = (&p + p.transpose()) * 0.5;

    let closed = a - &s * &p;
    let stable = closed.complex_eigenvalues().iter().all(|ev| ev.re < 0.0);
    let residual = a.transpose() * &p + &p * a - &p * &s * &p + q;
    let scale = p.amax().max(q.amax()).max(1.0);
    if !stable || !p.iter().all(|v| v.is_finite()) || residual.amax() > 1e-8 * scale {
        return Err(Error::NotStabilizable);
    }
    Ok(p)
}

/// LQR feedback gain `K` with `u = -K x`, i.e. `K = 2 R^-1 B^T P`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = lqr_riccati_oracle(a, b, q, r)?;
    Ok(spd_inverse(r)? * b.transpose() * p * 2.0)
}

/// Coefficients of `x^T P x` in the graded monomial basis of degree 2
/// (`x_i^2` with weight 1, `x_i x_j` with weight sqrt 2).
pub fn quadratic_coefficients(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut c = Vec::with_capacity(n * (n + 1) / 2);
    // Degree-2 exponents in descending lexicographic order: (2,0..), (1,1,0..), ...
    for i in 0..n {
        for j in i..n {
            if i == j {
                c.push(p[(i, i)]);
            } else {
                c.push(std::f64::consts::SQRT_2 * p[(i, j)]);
            }
        }
    }
    DVector::from_vec(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_integrator() {
        let p = lqr_riccati_oracle(&s(0.0), &s(1.0), &s(1.0), &s(2.0)).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        let k = lqr_gain(&s(0.0), &s(1.0), &s(1.0), &s(2.0)).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stable_uncontrolled_lyapunov() {
        // x' = -x costs int x0^2 e^-2t dt = x0^2 / 2.
        let p = lqr_riccati_oracle(&s(-1.0), &s(0.0), &s(1.0), &s(1.0)).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn unstable_uncontrollable_fails() {
        assert_eq!(lqr_riccati_oracle(&s(1.0), &s(0.0), &s(1.0), &s(1.0)).unwrap_err(), Error::NotStabilizable);
    }

    #[test]
    fn homogeneity_in_weights() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let r = s(0.7);
        let p = lqr_riccati_oracle(&a, &b, &q, &r).unwrap();
        let p3 = lqr_riccati_oracle(&a, &b, &(&q * 3.0), &(&r * 3.0)).unwrap();
        assert_relative_eq!(p3, p * 3.0, epsilon = 1e-9);
    }

    #[test]
    fn coefficient_mapping() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let c = quadratic_coefficients(&p);
        assert_relative_eq!(c, DVector::from_column_slice(&[1.0, 0.5 * 2f64.sqrt(), 2.0]), epsilon = 1e-15);
    }
}
