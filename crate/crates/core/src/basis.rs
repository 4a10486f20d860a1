//! Complete polynomial bases for the value function.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::StateVector;

/// Exponents of a monomial `x1^e1 ... xn^en`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `d! / (e1! ... en!)`
    pub fn multinomial(&self) -> f64 {
        let mut num = 1.0;
        let mut k = 0u32;
        for &e in &self.0 {
            for i in 1..=e {
                k += 1;
                num *= k as f64 / i as f64;
            }
        }
        num.round()
    }
}

/// Scaled monomials `coef_j * x^alpha_j`, all of total degree >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    dim: usize,
    d_min: u32,
    d_max: u32,
    terms: Vec<(MultiIndex, f64)>,
}

/// All monomials of total degree in `[d_min, d_max]`, each scaled by the square
/// root of its multinomial coefficient. Within a degree, terms are ordered by
/// descending exponent of `x1`, then `x2`, and so on.
pub fn make_poly_basis(n: usize, d_min: u32, d_max: u32) -> Result<BasisSet> {
    if n == 0 {
        return Err(Error::Invalid("basis dimension must be positive".into()));
    }
    if d_min < 2 || d_min > d_max {
        return Err(Error::Invalid(format!(
            "basis degrees must satisfy 2 <= d_min <= d_max (got {d_min}..{d_max})"
        )));
    }
    let mut terms = Vec::new();
    for d in d_min..=d_max {
        let mut idx = Vec::new();
        compositions(n, d, &mut Vec::with_capacity(n), &mut idx);
        for e in idx {
            let coef = e.multinomial().sqrt();
            terms.push((e, coef));
        }
    }
    Ok(BasisSet { dim: n, d_min, d_max, terms })
}

fn compositions(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() == n - 1 {
        let mut e = prefix.clone();
        e.push(remaining);
        out.push(MultiIndex(e));
        return;
    }
    for first in (0..=remaining).rev() {
        prefix.push(first);
        compositions(n, remaining - first, prefix, out);
        prefix.pop();
    }
}

impl BasisSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degrees(&self) -> (u32, u32) {
        (self.d_min, self.d_max)
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    fn powers(&self, x: &StateVector) -> Vec<Vec<f64>> {
        let top = self.d_max as usize;
        x.iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(top + 1);
                let mut acc = 1.0;
                for _ in 0..=top {
                    p.push(acc);
                    acc *= xi;
                }
                p
            })
            .collect()
    }

    /// `Phi(x)`
    pub fn eval(&self, x: &StateVector) -> DVector<f64> {
        assert_eq!(x.len(), self.dim, "state dimension mismatch");
        let pw = self.powers(x);
        DVector::from_iterator(
            self.len(),
            self.terms.iter().map(|(e, c)| {
                e.0.iter().enumerate().fold(*c, |acc, (i, &k)| acc * pw[i][k as usize])
            }),
        )
    }

    /// Jacobian of `Phi`; row `j` is the gradient of the `j`-th basis function.
    pub fn grad(&self, x: &StateVector) -> DMatrix<f64> {
        assert_eq!(x.len(), self.dim, "state dimension mismatch");
        let pw = self.powers(x);
        let mut jac = DMatrix::zeros(self.len(), self.dim);
        for (j, (e, c)) in self.terms.iter().enumerate() {
            for d in 0..self.dim {
                let k = e.0[d];
                if k == 0 {
                    continue;
                }
                let mut val = c * k as f64 * pw[d][k as usize - 1];
                for (i, &ki) in e.0.iter().enumerate() {
                    if i != d {
                        val *= pw[i][ki as usize];
                    }
                }
                jac[(j, d)] = val;
            }
        }
        jac
    }
}
