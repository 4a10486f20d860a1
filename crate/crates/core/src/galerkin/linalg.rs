use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition estimates above this are reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: DVector<f64>,
    /// `|A x - b|_inf`
    pub residual: f64,
    /// 1-norm condition estimate of the row/column-equilibrated matrix
    pub condition: f64,
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max)
}

/// Solves `A x = b` by LU with partial pivoting.
///
/// The matrix is equilibrated by the inverse root of its row and column maxima
/// before factorization; the reported condition number refers to the scaled
/// matrix, which is what governs the accuracy of the solve.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LinearSolution> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::Dimension { expected: a.nrows(), got: b.len() });
    }
    let n = a.nrows();
    let row_scale: Vec<f64> = (0..n)
        .map(|i| {
            let m = a.row(i).amax();
            if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }
        })
        .collect();
    let col_scale: Vec<f64> = (0..n)
        .map(|j| {
            let m = a.column(j).amax();
            if m > 0.0 { 1.0 / m.sqrt() } else { 1.0 }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * row_scale[i] * col_scale[j]);
    let lu = scaled.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::SingularSystem { condition: f64::INFINITY })?;
    let condition = norm1(&scaled) * norm1(&inv);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularSystem { condition });
    }
    let rhs = DVector::from_fn(n, |i, _| b[i] * row_scale[i]);
    let y = lu.solve(&rhs).ok_or(Error::SingularSystem { condition })?;
    let x = DVector::from_fn(n, |j, _| y[j] * col_scale[j]);
    let residual = (a * &x - b).amax();
    Ok(LinearSolution { x, residual, condition })
}
