//! Feedback laws built from value-function approximations and barrier data,
//! plus HJB residuals for verification.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::cost::QuadraticCost;
use crate::error::{Error, Result};
use crate::models::{ControlAffine, ControlVector, StateVector};
use crate::safety::{
    c_s, constraint_data, evaluate_constraint, lambda_multiplier, min_norm_filter, qbar, rbar, rbar_sqrt,
    safety_terms, BarrierSpec,
};

/// `V(x) = sum_j c_j phi_j(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn {
    pub basis: BasisSet,
    pub c: DVector<f64>,
}

impl ValueFn {
    pub fn new(basis: BasisSet, c: DVector<f64>) -> Result<Self> {
        if basis.len() != c.len() {
            return Err(Error::Dimension { expected: basis.len(), got: c.len() });
        }
        Ok(Self { basis, c })
    }

    pub fn value(&self, x: &StateVector) -> f64 {
        self.basis.eval(x).dot(&self.c)
    }

    pub fn gradient(&self, x: &StateVector) -> DVector<f64> {
        self.basis.grad(x).tr_mul(&self.c)
    }
}

pub fn value_eval(v: &ValueFn, x: &StateVector) -> f64 {
    v.value(x)
}

pub fn value_grad(v: &ValueFn, x: &StateVector) -> DVector<f64> {
    v.gradient(x)
}

/// Dynamics and cost a controller acts on.
#[derive(Debug, Clone)]
pub struct Plant {
    pub model: Arc<dyn ControlAffine>,
    pub cost: QuadraticCost,
}

fn lg_v(plant: &Plant, v: &ValueFn, x: &StateVector) -> DVector<f64> {
    plant.model.input_matrix(x).transpose() * v.gradient(x)
}

/// `-R^-1 g^T grad V`
pub fn u_unconstrained(v: &ValueFn, plant: &Plant, x: &StateVector) -> ControlVector {
    -(plant.cost.r_inv() * lg_v(plant, v, x))
}

/// Optimal safe control and its multiplier. Inactive states return the
/// unconstrained control with `lambda = 0`; active states return
/// `-(Rbar g^T grad V + u_cbf)`.
pub fn u_safe(v: &ValueFn, spec: &BarrierSpec, plant: &Plant, x: &StateVector) -> Result<(ControlVector, f64)> {
    let lgv = lg_v(plant, v, x);
    let unc = -(plant.cost.r_inv() * &lgv);
    let data = evaluate_constraint(spec, &plant.model, x)?;
    if c_s(&data, &unc) >= 0.0 {
        return Ok((unc, 0.0));
    }
    if data.is_degenerate() {
        return Err(Error::DegenerateHocbf { at: x.iter().copied().collect() });
    }
    let lambda = lambda_multiplier(&data, plant.cost.r(), &lgv)?;
    let terms = safety_terms(data, plant.cost.r())?;
    Ok((-(&terms.rbar * lgv + terms.u_cbf), lambda))
}

/// The multiplier form `-R^-1 (L_g V - lambda a)^T` of the safe control.
pub fn u_safe_multiplier_form(
    v: &ValueFn,
    spec: &BarrierSpec,
    plant: &Plant,
    x: &StateVector,
) -> Result<ControlVector> {
    let lgv = lg_v(plant, v, x);
    let data = constraint_data(spec, &plant.model, x)?;
    let lambda = lambda_multiplier(&data, plant.cost.r(), &lgv)?;
    Ok(-(plant.cost.r_inv() * (lgv - &data.a * lambda)))
}

/// Min-norm projection of a nominal control onto the safe half-space.
pub fn u_min_norm(nominal: &ControlVector, spec: &BarrierSpec, plant: &Plant, x: &StateVector) -> Result<ControlVector> {
    let data = evaluate_constraint(spec, &plant.model, x)?;
    min_norm_filter(&data, nominal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    /// `L_f V - 1/2 L_g V R^-1 L_g V^T + Q + 1/2 lambda^2 a R^-1 a^T`
    Direct,
    /// `L_Fbar V - 1/2 |L_gbar V|^2 + 1/2 Qbar` on the active branch
    Transformed,
}

/// Residual of the (constrained) HJB equation at `x`. Both forms coincide; on
/// the inactive branch they reduce to the unconstrained residual.
pub fn hjb_residual(
    v: &ValueFn,
    spec: Option<&BarrierSpec>,
    plant: &Plant,
    x: &StateVector,
    form: ResidualForm,
) -> Result<f64> {
    let grad = v.gradient(x);
    let f = plant.model.drift(x);
    let g = plant.model.input_matrix(x);
    let lgv = g.transpose() * &grad;
    let r_inv = plant.cost.r_inv();
    let q = plant.cost.state_cost(x);
    let unconstrained = grad.dot(&f) - 0.5 * lgv.dot(&(r_inv * &lgv)) + q;

    let Some(spec) = spec else { return Ok(unconstrained) };
    let data = evaluate_constraint(spec, &plant.model, x)?;
    if c_s(&data, &(-(r_inv * &lgv))) >= 0.0 {
        return Ok(unconstrained);
    }
    if data.is_degenerate() {
        return Err(Error::DegenerateHocbf { at: x.iter().copied().collect() });
    }
    let r = plant.cost.r();
    match form {
        ResidualForm::Direct => {
            let lambda = lambda_multiplier(&data, r, &lgv)?;
            let h = data.a.dot(&(r_inv * &data.a));
            Ok(unconstrained + 0.5 * lambda * lambda * h)
        }
        ResidualForm::Transformed => {
            let terms = safety_terms(data.clone(), r)?;
            let f_bar = &f - &g * &terms.eta * (data.b / terms.h);
            let g_bar = &g * rbar_sqrt(&rbar(&data, r)?)?;
            let lg_bar = g_bar.transpose() * &grad;
            Ok(grad.dot(&f_bar) - 0.5 * lg_bar.norm_squared() + 0.5 * qbar(&data, r, q)?)
        }
    }
}

/// Explicit state-feedback evaluator.
pub type FeedbackFn = Arc<dyn Fn(&StateVector) -> ControlVector + Send + Sync>;

/// Evaluated control with the multiplier of the safety constraint (0 when unused).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: ControlVector,
    pub lambda: f64,
}

/// A closed-loop feedback law with a uniform `x -> u` evaluator.
#[derive(Clone)]
pub enum Controller {
    Unconstrained { value: ValueFn, plant: Plant },
    SafeOptimal { value: ValueFn, plant: Plant, barrier: BarrierSpec },
    MinNormFiltered { nominal: Box<Controller>, plant: Plant, barrier: BarrierSpec },
    Explicit { input_dim: usize, law: FeedbackFn },
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Unconstrained { value, .. } => write!(f, "Unconstrained(N={})", value.c.len()),
            Self::SafeOptimal { value, .. } => write!(f, "SafeOptimal(N={})", value.c.len()),
            Self::MinNormFiltered { nominal, .. } => write!(f, "MinNormFiltered({nominal:?})"),
            Self::Explicit { input_dim, .. } => write!(f, "Explicit(m={input_dim})"),
        }
    }
}

impl Controller {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Unconstrained { .. } => "unconstrained",
            Self::SafeOptimal { .. } => "safe-optimal",
            Self::MinNormFiltered { .. } => "min-norm",
            Self::Explicit { .. } => "explicit",
        }
    }

    pub fn zero(input_dim: usize) -> Self {
        Self::Explicit { input_dim, law: Arc::new(move |_| DVector::zeros(input_dim)) }
    }

    pub fn linear(gain: DMatrix<f64>) -> Self {
        let input_dim = gain.nrows();
        Self::Explicit { input_dim, law: Arc::new(move |x| -(&gain * x)) }
    }

    pub fn value(&self) -> Option<&ValueFn> {
        match self {
            Self::Unconstrained { value, .. } | Self::SafeOptimal { value, .. } => Some(value),
            Self::MinNormFiltered { nominal, .. } => nominal.value(),
            Self::Explicit { .. } => None,
        }
    }

    pub fn barrier(&self) -> Option<&BarrierSpec> {
        match self {
            Self::SafeOptimal { barrier, .. } | Self::MinNormFiltered { barrier, .. } => Some(barrier),
            _ => None,
        }
    }

    pub fn eval(&self, x: &StateVector) -> Result<ControlOutput> {
        match self {
            Self::Unconstrained { value, plant } => Ok(ControlOutput { u: u_unconstrained(value, plant, x), lambda: 0.0 }),
            Self::SafeOptimal { value, plant, barrier } => {
                let (u, lambda) = u_safe(value, barrier, plant, x)?;
                Ok(ControlOutput { u, lambda })
            }
            Self::MinNormFiltered { nominal, plant, barrier } => {
                let base = nominal.eval(x)?;
                Ok(ControlOutput { u: u_min_norm(&base.u, barrier, plant, x)?, lambda: 0.0 })
            }
            Self::Explicit { law, .. } => Ok(ControlOutput { u: law(x), lambda: 0.0 }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_poly_basis;
    use crate::models::{DoubleIntegrator, TwoStateExample, ScalarIntegrator};
    use crate::safety::{BarrierShape, ClassKappa, HalfSpace};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_plant() -> (Plant, ValueFn) {
        let plant = Plant {
            model: Arc::new(ScalarIntegrator),
            cost: QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0)).unwrap(),
        };
        let value = ValueFn::new(make_poly_basis(1, 2, 2).unwrap(), v(&[1.0])).unwrap();
        (plant, value)
    }

    fn example_plant() -> (Plant, BarrierSpec, ValueFn) {
        let plant = Plant {
            model: Arc::new(TwoStateExample),
            cost: QuadraticCost::new(DMatrix::identity(2, 2) * 50.0, DMatrix::identity(2, 2) * 2.0).unwrap(),
        };
        let barrier = BarrierSpec::circle(&[0.75, -0.6], 0.25, 20.0).unwrap();
        #[rustfmt::skip]
        let c = v(&[4.68, 1.78, 5.43, 0.26, -0.47, 0.44, -0.10, 0.10, -0.05, 0.24, -0.07, -0.26, -0.05,
            0.02, 0.01, 0.0, -0.06, -0.03, 0.0, 0.02, -0.01, -0.01, -0.01, 0.02, 0.03]);
        (plant, barrier, ValueFn::new(make_poly_basis(2, 2, 6).unwrap(), c).unwrap())
    }

    #[test]
    fn value_and_gradient() {
        let (_, value) = scalar_plant();
        assert_eq!(value.value(&v(&[3.0])), 9.0);
        assert_eq!(value.gradient(&v(&[3.0]))[0], 6.0);
        assert_eq!(value.value(&v(&[0.0])), 0.0);
        assert!(ValueFn::new(make_poly_basis(1, 2, 3).unwrap(), v(&[1.0])).is_err());

        let (_, _, value_fn) = example_plant();
        let x = v(&[1.0, -0.8]);
        let direct: f64 = value_fn.basis.eval(&x).iter().zip(value_fn.c.iter()).map(|(p, c)| p * c).sum();
        assert_relative_eq!(value_eval(&value_fn, &x), direct, epsilon = 1e-12);
        assert_eq!(value_grad(&value_fn, &v(&[0.0, 0.0])), v(&[0.0, 0.0]));
    }

    #[test]
    fn unconstrained_control() {
        let (plant, value) = scalar_plant();
        assert_relative_eq!(u_unconstrained(&value, &plant, &v(&[1.0]))[0], -1.0);
        let zero = ValueFn::new(value.basis.clone(), v(&[0.0])).unwrap();
        assert_eq!(u_unconstrained(&zero, &plant, &v(&[1.0]))[0], 0.0);
    }

    #[test]
    fn single_input_active_branch_is_cbf_feedforward() {
        let plant = Plant {
            model: Arc::new(DoubleIntegrator),
            cost: QuadraticCost::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap(),
        };
        let barrier = BarrierSpec::new(
            BarrierShape::HalfSpace(HalfSpace { normal: v(&[1.0, 0.0]), offset: 1.0 }),
            vec![ClassKappa::linear(1.0).unwrap(); 2],
        )
        .unwrap();
        // grad V = 0 at the origin for any polynomial basis of degree >= 2.
        let value = ValueFn::new(make_poly_basis(2, 2, 2).unwrap(), v(&[1.0, 0.0, 0.1])).unwrap();
        let x = v(&[0.0, 0.0]);
        let (u, lambda) = u_safe(&value, &barrier, &plant, &x).unwrap();
        // Unconstrained control is 0 and C_s(0) = 1 >= 0: inactive.
        assert_eq!((u[0], lambda), (0.0, 0.0));

        // Moving toward the wall fast makes the constraint bind; the output is then
        // independent of the value function.
        let x = v(&[0.5, 0.6]);
        let (u1, l1) = u_safe(&value, &barrier, &plant, &x).unwrap();
        let other = ValueFn::new(value.basis.clone(), v(&[3.0, 0.2, 0.2])).unwrap();
        let (u2, _) = u_safe(&other, &barrier, &plant, &x).unwrap();
        assert!(l1 > 0.0);
        let data = constraint_data(&barrier, &plant.model, &x).unwrap();
        assert_relative_eq!(c_s(&data, &u1), 0.0, epsilon = 1e-9);
        assert_relative_eq!(u1, u2, epsilon = 1e-12);
    }

    #[test]
    fn safe_control_forms_agree() {
        let (plant, barrier, value) = example_plant();
        let x = v(&[1.0, -0.75]);
        let (u, lambda) = u_safe(&value, &barrier, &plant, &x).unwrap();
        assert!(lambda > 0.0, "state should be active");
        let alt = u_safe_multiplier_form(&value, &barrier, &plant, &x).unwrap();
        assert!((&u - alt).amax() < 1e-10);
        let data = constraint_data(&barrier, &plant.model, &x).unwrap();
        assert!(c_s(&data, &u).abs() < 1e-8);
    }

    #[test]
    fn residual_forms() {
        let (plant, value) = scalar_plant();
        let r = hjb_residual(&value, None, &plant, &v(&[0.7]), ResidualForm::Direct).unwrap();
        assert!(r.abs() < 1e-14);
        let zero = ValueFn::new(value.basis.clone(), v(&[0.0])).unwrap();
        let r = hjb_residual(&zero, None, &plant, &v(&[0.7]), ResidualForm::Direct).unwrap();
        assert_relative_eq!(r, 0.49, epsilon = 1e-15);

        let (plant, barrier, value) = example_plant();
        let x = v(&[1.0, -0.75]);
        let d = hjb_residual(&value, Some(&barrier), &plant, &x, ResidualForm::Direct).unwrap();
        let t = hjb_residual(&value, Some(&barrier), &plant, &x, ResidualForm::Transformed).unwrap();
        assert!((d - t).abs() < 1e-8 * d.abs().max(1.0), "{d} vs {t}");
    }

    #[test]
    fn controller_dispatch() {
        let (plant, barrier, value) = example_plant();
        let nominal = Controller::Unconstrained { value: value.clone(), plant: plant.clone() };
        let filtered = Controller::MinNormFiltered { nominal: Box::new(nominal.clone()), plant: plant.clone(), barrier };
        let x = v(&[1.5, 1.5]);
        assert_eq!(nominal.eval(&x).unwrap().u, filtered.eval(&x).unwrap().u);
        assert_eq!(filtered.kind(), "min-norm");
        assert!(filtered.value().is_some());
        let z = Controller::zero(2).eval(&x).unwrap();
        assert_eq!(z.u, v(&[0.0, 0.0]));
        let lin = Controller::linear(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).eval(&x).unwrap();
        assert_eq!(lin.u, v(&[-4.5]));
    }
}
