//! High-order control barrier function algebra.
//!
//! For a barrier `h` of relative degree `k` with class-K gains `alpha_1..alpha_k`
//! the chain `psi_0 = h`, `psi_i = L_f psi_(i-1) + alpha_i(psi_(i-1))` yields the
//! affine safety constraint `C_s(u) = b + a u >= 0` with
//! `a = L_g L_f^(k-1) h` and `b = L_f psi_(k-1) + alpha_k(psi_(k-1))`.
//!
//! Everything downstream of the constraint (the multiplier, the projected input
//! weight `Rbar`, the feedforward `u_cbf`, the min-norm filter) only needs `(a, b)`
//! and the input weight `R`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{field_gradient, ControlAffine, ControlVector, ScalarField, StateVector};

/// `|a|` at or below this is treated as a vanishing constraint gradient.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Differentiable class-K function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassKappa {
    /// `alpha(s) = gain * s`
    Linear(f64),
    /// `alpha(s) = gain * s^power`, `power` odd
    OddPower { gain: f64, power: u32 },
}

impl ClassKappa {
    pub fn linear(gain: f64) -> Result<Self> {
        Self::Linear(gain).validated()
    }

    pub fn odd_power(gain: f64, power: u32) -> Result<Self> {
        Self::OddPower { gain, power }.validated()
    }

    fn validated(self) -> Result<Self> {
        let gain = match self {
            Self::Linear(g) => g,
            Self::OddPower { gain, power } => {
                if power % 2 == 0 {
                    return Err(Error::Invalid(format!("class-K power must be odd, got {power}")));
                }
                gain
            }
        };
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Invalid(format!("class-K gain must be positive, got {gain}")));
        }
        Ok(self)
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Self::Linear(g) => g * s,
            Self::OddPower { gain, power } => gain * s.powi(power as i32),
        }
    }
}

impl fmt::Display for ClassKappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(g) => write!(f, "linear {g}"),
            Self::OddPower { gain, power } => write!(f, "power {gain} {power}"),
        }
    }
}

/// `h(x) = |x - center|^2 - radius^2`: nonnegative outside a ball obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleObstacle {
    pub center: DVector<f64>,
    pub radius: f64,
}

impl ScalarField for CircleObstacle {
    fn value(&self, x: &StateVector) -> f64 {
        (x - &self.center).norm_squared() - self.radius * self.radius
    }
    fn gradient(&self, x: &StateVector) -> Option<StateVector> {
        Some(2.0 * (x - &self.center))
    }
}

/// `h(x) = offset - normal . x`: nonnegative on one side of a hyperplane.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl ScalarField for HalfSpace {
    fn value(&self, x: &StateVector) -> f64 {
        self.offset - self.normal.dot(x)
    }
    fn gradient(&self, _x: &StateVector) -> Option<StateVector> {
        Some(-self.normal.clone())
    }
}

/// Shape of the safe set's defining function.
#[derive(Debug, Clone)]
pub enum BarrierShape {
    Circle(CircleObstacle),
    HalfSpace(HalfSpace),
    Field(Arc<dyn ScalarField>),
}

/// Barrier function `h` with relative degree `k = alphas.len()`.
#[derive(Debug, Clone)]
pub struct BarrierSpec {
    shape: BarrierShape,
    field: Arc<dyn ScalarField>,
    alphas: Vec<ClassKappa>,
}

impl BarrierSpec {
    pub fn new(shape: BarrierShape, alphas: Vec<ClassKappa>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Invalid("relative degree must be at least 1".into()));
        }
        if alphas.len() > 2 {
            log::warn!(
                "relative degree {} uses nested finite differences; expect amplified truncation error",
                alphas.len()
            );
        }
        let field: Arc<dyn ScalarField> = match &shape {
            BarrierShape::Circle(c) => {
                if !(c.radius > 0.0) {
                    return Err(Error::Invalid("obstacle radius must be positive".into()));
                }
                Arc::new(c.clone())
            }
            BarrierShape::HalfSpace(p) => Arc::new(p.clone()),
            BarrierShape::Field(f) => f.clone(),
        };
        Ok(Self { shape, field, alphas })
    }

    /// First-order barrier keeping the state outside a circular obstacle.
    pub fn circle(center: &[f64], radius: f64, gain: f64) -> Result<Self> {
        Self::new(
            BarrierShape::Circle(CircleObstacle { center: DVector::from_column_slice(center), radius }),
            vec![ClassKappa::linear(gain)?],
        )
    }

    pub fn shape(&self) -> &BarrierShape {
        &self.shape
    }

    pub fn alphas(&self) -> &[ClassKappa] {
        &self.alphas
    }

    pub fn relative_degree(&self) -> usize {
        self.alphas.len()
    }

    pub fn h(&self, x: &StateVector) -> f64 {
        self.field.value(x)
    }

    pub fn field(&self) -> &Arc<dyn ScalarField> {
        &self.field
    }

    /// Checks `grad h != 0` on sampled points of the zero level set.
    pub fn boundary_gradient_ok(&self, samples: &[StateVector]) -> Result<bool> {
        for x in samples {
            if self.h(x).abs() < 1e-9 && field_gradient(self.field.as_ref(), x)?.norm() <= DEGENERACY_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `psi_0, ..., psi_(k-1)` as fields.
    fn chain(&self, model: &Arc<dyn ControlAffine>) -> Vec<Arc<dyn ScalarField>> {
        let mut fields = vec![self.field.clone()];
        for alpha in &self.alphas[..self.alphas.len() - 1] {
            let prev = fields.last().expect("nonempty").clone();
            fields.push(Arc::new(PsiLevel { model: model.clone(), prev, alpha: *alpha }));
        }
        fields
    }
}

#[derive(Debug)]
struct PsiLevel {
    model: Arc<dyn ControlAffine>,
    prev: Arc<dyn ScalarField>,
    alpha: ClassKappa,
}

impl ScalarField for PsiLevel {
    fn value(&self, x: &StateVector) -> f64 {
        let Ok(grad) = field_gradient(self.prev.as_ref(), x) else {
            return f64::NAN;
        };
        grad.dot(&self.model.drift(x)) + self.alpha.eval(self.prev.value(x))
    }
}

/// Values `(psi_0(x), ..., psi_(k-1)(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiChain {
    pub values: Vec<f64>,
}

impl PsiChain {
    /// Membership in the intersection of the superlevel sets `psi_i >= 0`.
    pub fn in_safe_set(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    pub fn in_interior(&self) -> bool {
        self.values.iter().all(|v| *v > 0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The affine safety constraint `C_s(u) = b + a u` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintData {
    pub a: DVector<f64>,
    pub b: f64,
    pub psi: PsiChain,
}

impl ConstraintData {
    pub fn is_degenerate(&self) -> bool {
        self.a.norm() <= DEGENERACY_TOL
    }
}

pub fn psi_chain(spec: &BarrierSpec, model: &Arc<dyn ControlAffine>, x: &StateVector) -> Result<PsiChain> {
    let values: Vec<f64> = spec.chain(model).iter().map(|f| f.value(x)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("psi chain at {:?}", x.as_slice())));
    }
    Ok(PsiChain { values })
}

/// Constraint data without the degeneracy check.
pub fn evaluate_constraint(
    spec: &BarrierSpec,
    model: &Arc<dyn ControlAffine>,
    x: &StateVector,
) -> Result<ConstraintData> {
    let chain = spec.chain(model);
    let top = chain.last().expect("k >= 1");
    let values: Vec<f64> = chain.iter().map(|f| f.value(x)).collect();
    let grad = field_gradient(top.as_ref(), x)?;
    let a = model.input_matrix(x).transpose() * &grad;
    let psi_top = *values.last().expect("k >= 1");
    let b = grad.dot(&model.drift(x)) + spec.alphas.last().expect("k >= 1").eval(psi_top);
    if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("constraint data at {:?}", x.as_slice())));
    }
    Ok(ConstraintData { a, b, psi: PsiChain { values } })
}

/// Constraint data; fails when the relative-degree assumption breaks at `x`.
pub fn constraint_data(
    spec: &BarrierSpec,
    model: &Arc<dyn ControlAffine>,
    x: &StateVector,
) -> Result<ConstraintData> {
    let data = evaluate_constraint(spec, model, x)?;
    if data.is_degenerate() {
        return Err(Error::DegenerateHocbf { at: x.iter().copied().collect() });
    }
    Ok(data)
}

pub fn c_s(data: &ConstraintData, u: &ControlVector) -> f64 {
    data.b + data.a.dot(u)
}

/// Inverse of a symmetric positive definite input weight.
pub fn spd_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !r.is_square() {
        return Err(Error::NotSpd);
    }
    let scale = r.amax().max(1.0);
    if (r - r.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSpd);
    }
    let chol = r.clone().cholesky().ok_or(Error::NotSpd)?;
    Ok(chol.inverse())
}

fn check_active_gradient(data: &ConstraintData) -> Result<()> {
    if data.is_degenerate() {
        return Err(Error::DegenerateHocbf { at: Vec::new() });
    }
    Ok(())
}

/// `eta = R^-1 a^T`, `H = a R^-1 a^T`.
pub fn eta_h(data: &ConstraintData, r: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    if r.nrows() != data.a.len() {
        return Err(Error::Dimension { expected: data.a.len(), got: r.nrows() });
    }
    let r_inv = spd_inverse(r)?;
    check_active_gradient(data)?;
    let eta = &r_inv * &data.a;
    let h = data.a.dot(&eta);
    Ok((eta, h))
}

/// KKT multiplier of the safety constraint for the controller driven by `lgv = (L_g V)^T`.
pub fn lambda_multiplier(data: &ConstraintData, r: &DMatrix<f64>, lgv: &DVector<f64>) -> Result<f64> {
    let (eta, h) = eta_h(data, r)?;
    // C_s at the unconstrained control -R^-1 lgv is b - eta . lgv.
    let slack = data.b - eta.dot(lgv);
    Ok(if slack < 0.0 { -slack / h } else { 0.0 })
}

/// Safety feedforward `eta H^-1 b`.
pub fn u_cbf(data: &ConstraintData, r: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (eta, h) = eta_h(data, r)?;
    Ok(eta * (data.b / h))
}

/// Closest control to `u_nom` in the half-space `b + a u >= 0`.
pub fn min_norm_filter(data: &ConstraintData, u_nom: &ControlVector) -> Result<ControlVector> {
    if u_nom.len() != data.a.len() {
        return Err(Error::Dimension { expected: data.a.len(), got: u_nom.len() });
    }
    if data.is_degenerate() {
        if data.b < 0.0 {
            return Err(Error::InfeasibleFilter { value: data.b });
        }
        return Ok(u_nom.clone());
    }
    let deficit = -c_s(data, u_nom);
    if deficit <= 0.0 {
        return Ok(u_nom.clone());
    }
    let mut u = u_nom + &data.a * (deficit / data.a.norm_squared());
    // Rounding can leave C_s a few ulps below zero; nudge along a.
    let mut residual = c_s(data, &u);
    let mut tries = 0;
    while residual < 0.0 && tries < 4 {
        u += &data.a * (-residual / data.a.norm_squared() + f64::EPSILON);
        residual = c_s(data, &u);
        tries += 1;
    }
    Ok(u)
}

/// `Rbar = R^-1 - eta H^-1 eta^T`, symmetric PSD with `Rbar a^T = 0`.
pub fn rbar(data: &ConstraintData, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (eta, h) = eta_h(data, r)?;
    let m = eta.len();
    if m == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    let r_inv = spd_inverse(r)?;
    let full = r_inv - &eta * eta.transpose() / h;
    Ok((&full + full.transpose()) * 0.5)
}

/// Unique symmetric PSD square root.
pub fn rbar_sqrt(rbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !rbar.is_square() {
        return Err(Error::Invalid("matrix must be square".into()));
    }
    let sym = (rbar + rbar.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for ev in roots.iter_mut() {
        if *ev < -1e-10 {
            return Err(Error::NotPsd { eigenvalue: *ev });
        }
        *ev = ev.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `Qbar = 2 Q(x) + b^2 / H`.
pub fn qbar(data: &ConstraintData, r: &DMatrix<f64>, q_of_x: f64) -> Result<f64> {
    let (_, h) = eta_h(data, r)?;
    Ok(2.0 * q_of_x + data.b * data.b / h)
}

/// Per-state safety quantities used by both synthesis and evaluation.
#[derive(Debug, Clone)]
pub struct SafetyTerms {
    pub data: ConstraintData,
    pub eta: DVector<f64>,
    pub h: f64,
    pub rbar: DMatrix<f64>,
    pub u_cbf: DVector<f64>,
}

pub fn safety_terms(data: ConstraintData, r: &DMatrix<f64>) -> Result<SafetyTerms> {
    let (eta, h) = eta_h(&data, r)?;
    let rbar = rbar(&data, r)?;
    let u_cbf = &eta * (data.b / h);
    Ok(SafetyTerms { data, eta, h, rbar, u_cbf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoubleIntegrator, TwoStateExample};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn example() -> (BarrierSpec, Arc<dyn ControlAffine>) {
        (BarrierSpec::circle(&[0.75, -0.6], 0.25, 20.0).unwrap(), Arc::new(TwoStateExample))
    }

    fn wall() -> (BarrierSpec, Arc<dyn ControlAffine>) {
        let shape = BarrierShape::HalfSpace(HalfSpace { normal: v(&[1.0, 0.0]), offset: 1.0 });
        let alphas = vec![ClassKappa::linear(1.0).unwrap(); 2];
        (BarrierSpec::new(shape, alphas).unwrap(), Arc::new(DoubleIntegrator))
    }

    fn data(a: &[f64], b: f64) -> ConstraintData {
        ConstraintData { a: v(a), b, psi: PsiChain { values: vec![0.0] } }
    }

    #[test]
    fn class_kappa_validation() {
        assert!(ClassKappa::linear(0.0).is_err());
        assert!(ClassKappa::odd_power(1.0, 2).is_err());
        let cubic = ClassKappa::odd_power(2.0, 3).unwrap();
        assert_eq!(cubic.eval(-1.0), -2.0);
        assert_eq!(ClassKappa::linear(20.0).unwrap().eval(0.0), 0.0);
    }

    #[test]
    fn psi_chain_values() {
        let (spec, model) = example();
        let psi = psi_chain(&spec, &model, &v(&[1.0, -0.8])).unwrap();
        assert_relative_eq!(psi.values[0], 0.04, epsilon = 1e-14);
        let psi = psi_chain(&spec, &model, &v(&[0.75, -0.6])).unwrap();
        assert_relative_eq!(psi.values[0], -0.0625, epsilon = 1e-15);
        assert!(!psi.in_safe_set());

        let (spec, model) = wall();
        let psi = psi_chain(&spec, &model, &v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(psi.values[0], 1.0);
        assert_relative_eq!(psi.values[1], 1.0, epsilon = 1e-9);
        // psi_1 = -x2 + 1 - x1
        let psi = psi_chain(&spec, &model, &v(&[0.2, 0.5])).unwrap();
        assert_relative_eq!(psi.values[1], 0.3, epsilon = 1e-9);
    }

    #[test]
    fn constraint_data_values() {
        let (spec, model) = example();
        let d = constraint_data(&spec, &model, &v(&[1.0, -0.8])).unwrap();
        assert_relative_eq!(d.a, v(&[0.5, 0.65]), epsilon = 1e-14);
        assert_relative_eq!(d.b, 0.761322 + 0.8, epsilon = 1e-6);

        let d = constraint_data(&spec, &model, &v(&[0.75, -0.3])).unwrap();
        assert_relative_eq!(d.a, v(&[0.0, -0.6]), epsilon = 1e-14);
        assert_relative_eq!(d.b, 0.4965625, epsilon = 1e-12);
        assert_relative_eq!(c_s(&d, &v(&[0.0, 1.0])), -0.1034375, epsilon = 1e-12);
        assert_eq!(c_s(&d, &v(&[0.0, 0.0])), d.b);

        let (spec, model) = wall();
        let d = constraint_data(&spec, &model, &v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(d.a[0], -1.0, epsilon = 1e-8);
        assert_relative_eq!(d.b, 1.0, epsilon = 1e-8);
        assert_relative_eq!(c_s(&d, &v(&[1.0])), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_gradient_is_an_error() {
        let (spec, model) = example();
        let err = constraint_data(&spec, &model, &v(&[0.75, -0.6])).unwrap_err();
        assert!(matches!(err, Error::DegenerateHocbf { .. }));
        assert!(eta_h(&data(&[0.0, 0.0], 1.0), &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn eta_and_h() {
        let (eta, h) = eta_h(&data(&[0.5, 0.65], 0.0), &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert_relative_eq!(eta, v(&[0.25, 0.325]), epsilon = 1e-15);
        assert_relative_eq!(h, 0.33625, epsilon = 1e-15);
        let (eta, h) = eta_h(&data(&[-1.0], 0.0), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!((eta[0], h), (-1.0, 1.0));
        let r = DMatrix::from_diagonal(&v(&[1.0, 4.0]));
        let (eta, h) = eta_h(&data(&[1.0, 0.0], 0.0), &r).unwrap();
        assert_eq!((eta, h), (v(&[1.0, 0.0]), 1.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(eta_h(&data(&[1.0, 0.0], 0.0), &bad).unwrap_err(), Error::NotSpd);
    }

    #[test]
    fn multiplier() {
        let r2 = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(lambda_multiplier(&data(&[0.5, 0.65], 1.0), &r2, &v(&[0.0, 0.0])).unwrap(), 0.0);
        let l = lambda_multiplier(&data(&[-1.0], -0.5), &DMatrix::identity(1, 1), &v(&[0.0])).unwrap();
        assert_relative_eq!(l, 0.5);
        let l = lambda_multiplier(&data(&[0.5, 0.65], -1.0), &r2, &v(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(l, 1.0 / 0.33625, epsilon = 1e-14);
        assert_relative_eq!(l, 2.97398, epsilon = 1e-5);
    }

    #[test]
    fn feedforward() {
        let (spec, model) = example();
        let d = constraint_data(&spec, &model, &v(&[1.0, -0.8])).unwrap();
        let u = u_cbf(&d, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        let scale = d.b / 0.33625;
        assert_relative_eq!(u, v(&[0.25 * scale, 0.325 * scale]), epsilon = 1e-12);
        assert_relative_eq!(u[0], 1.160835, epsilon = 1e-6);
        assert_relative_eq!(u[1], 1.509085, epsilon = 1e-6);
        assert_eq!(u_cbf(&data(&[0.3, 0.1], 0.0), &DMatrix::identity(2, 2)).unwrap(), v(&[0.0, 0.0]));
        let u = u_cbf(&data(&[-1.0], 1.0), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(u[0], -1.0);
    }

    #[test]
    fn min_norm() {
        let (spec, model) = example();
        let d = constraint_data(&spec, &model, &v(&[1.0, -0.8])).unwrap();
        assert_eq!(min_norm_filter(&d, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        let d = constraint_data(&spec, &model, &v(&[0.75, -0.3])).unwrap();
        let u = min_norm_filter(&d, &v(&[0.0, 1.0])).unwrap();
        assert_relative_eq!(u, v(&[0.0, 1.0 - 0.6 * 0.1034375 / 0.36]), epsilon = 1e-12);
        assert_relative_eq!(u[1], 0.827604, epsilon = 1e-6);
        assert!(c_s(&d, &u) >= 0.0);
        let u = min_norm_filter(&data(&[1.0], -1.0), &v(&[0.0])).unwrap();
        assert_relative_eq!(u[0], 1.0);
        assert_eq!(
            min_norm_filter(&data(&[0.0], -1.0), &v(&[0.0])).unwrap_err(),
            Error::InfeasibleFilter { value: -1.0 }
        );
    }

    #[test]
    fn projected_weight() {
        let r2 = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(rbar(&data(&[3.0], 1.0), &DMatrix::from_element(1, 1, 7.0)).unwrap()[(0, 0)], 0.0);
        let rb = rbar(&data(&[0.5, 0.65], 1.0), &r2).unwrap();
        assert!((&rb * v(&[0.5, 0.65])).amax() < 1e-15);
        let rb = rbar(&data(&[1.0, 0.0], 1.0), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(rb, DMatrix::from_diagonal(&v(&[0.0, 1.0])), epsilon = 1e-15);
    }

    #[test]
    fn psd_square_root() {
        assert_eq!(rbar_sqrt(&DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
        let p = DMatrix::from_diagonal(&v(&[0.0, 1.0]));
        assert_relative_eq!(rbar_sqrt(&p).unwrap(), p, epsilon = 1e-14);
        let s = rbar_sqrt(&DMatrix::from_diagonal(&v(&[0.25, 4.0]))).unwrap();
        assert_relative_eq!(s, DMatrix::from_diagonal(&v(&[0.5, 2.0])), epsilon = 1e-14);
        assert!(matches!(
            rbar_sqrt(&DMatrix::from_diagonal(&v(&[-1e-3, 1.0]))),
            Err(Error::NotPsd { .. })
        ));
        let clamped = rbar_sqrt(&DMatrix::from_diagonal(&v(&[-1e-12, 1.0]))).unwrap();
        assert_eq!(clamped[(0, 0)], 0.0);
    }

    #[test]
    fn projected_state_cost() {
        let r2 = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(qbar(&data(&[1.0, 0.0], 0.0), &r2, 3.0).unwrap(), 6.0);
        let (spec, model) = example();
        let d = constraint_data(&spec, &model, &v(&[1.0, -0.8])).unwrap();
        let q = qbar(&d, &r2, 82.0).unwrap();
        assert_relative_eq!(q, 164.0 + d.b * d.b / 0.33625, epsilon = 1e-12);
        assert_relative_eq!(q, 171.24977, epsilon = 1e-4);
        assert_eq!(qbar(&data(&[1.0], 1.0), &DMatrix::identity(1, 1), 0.0).unwrap(), 1.0);
    }
}
