//! Control-affine dynamics `x' = f(x) + g(x) u` and Lie-derivative evaluation.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub type StateVector = DVector<f64>;
pub type ControlVector = DVector<f64>;

/// A control-affine system. Implementations may assume `x` has length
/// `state_dim()`; the free functions [`eval_f`] and [`eval_g`] check it.
pub trait ControlAffine: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, x: &StateVector) -> StateVector;
    fn input_matrix(&self, x: &StateVector) -> DMatrix<f64>;
}

/// A scalar field over the state space, optionally with an analytic gradient.
pub trait ScalarField: Send + Sync + Debug {
    fn value(&self, x: &StateVector) -> f64;

    fn gradient(&self, _x: &StateVector) -> Option<StateVector> {
        None
    }
}

/// Direction for a Lie derivative: the drift `f` or the `j`-th column of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Drift,
    InputColumn(usize),
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

pub fn eval_f(model: &dyn ControlAffine, x: &StateVector) -> Result<StateVector> {
    check_dim(model.state_dim(), x.len())?;
    Ok(model.drift(x))
}

pub fn eval_g(model: &dyn ControlAffine, x: &StateVector) -> Result<DMatrix<f64>> {
    check_dim(model.state_dim(), x.len())?;
    Ok(model.input_matrix(x))
}

/// Closed-loop vector field `f(x) + g(x) u`.
pub fn closed_loop(model: &dyn ControlAffine, x: &StateVector, u: &ControlVector) -> StateVector {
    model.drift(x) + model.input_matrix(x) * u
}

/// Central-difference step used for black-box fields.
pub fn fd_step(x: &StateVector) -> f64 {
    1e-5 * x.amax().max(1.0)
}

/// Gradient of `field` at `x`: analytic when available, central differences otherwise.
pub fn field_gradient(field: &dyn ScalarField, x: &StateVector) -> Result<StateVector> {
    if let Some(g) = field.gradient(x) {
        return Ok(g);
    }
    central_gradient(|y| field.value(y), x)
}

/// Central finite-difference gradient with step `1e-5 * max(1, |x|_inf)`.
pub fn central_gradient<F: Fn(&StateVector) -> f64>(fun: F, x: &StateVector) -> Result<StateVector> {
    let step = fd_step(x);
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        let (up, down) = (xi + step, xi - step);
        if up == xi || down == xi {
            return Err(Error::StepUnderflow { at: x.iter().copied().collect() });
        }
        probe[i] = up;
        let fu = fun(&probe);
        probe[i] = down;
        let fd = fun(&probe);
        probe[i] = xi;
        grad[i] = (fu - fd) / (up - down);
    }
    Ok(grad)
}

/// `L_v field(x) = grad field(x) . v(x)` for `v = f` or a column of `g`.
pub fn lie_derivative(
    model: &dyn ControlAffine,
    field: &dyn ScalarField,
    along: Direction,
    x: &StateVector,
) -> Result<f64> {
    check_dim(model.state_dim(), x.len())?;
    let grad = field_gradient(field, x)?;
    Ok(match along {
        Direction::Drift => grad.dot(&model.drift(x)),
        Direction::InputColumn(j) => {
            if j >= model.input_dim() {
                return Err(Error::Dimension { expected: model.input_dim(), got: j + 1 });
            }
            grad.dot(&model.input_matrix(x).column(j))
        }
    })
}

/// The field `x -> L_v field(x)`, itself differentiable by finite differences,
/// so repeated wrapping yields `L_f^k h` and `L_g L_f^(k-1) h`.
#[derive(Debug, Clone)]
pub struct LieField {
    pub model: Arc<dyn ControlAffine>,
    pub field: Arc<dyn ScalarField>,
    pub along: Direction,
}

impl ScalarField for LieField {
    fn value(&self, x: &StateVector) -> f64 {
        lie_derivative(self.model.as_ref(), self.field.as_ref(), self.along, x).unwrap_or(f64::NAN)
    }
}

/// Returns the drift at the origin when it is not (numerically) zero.
pub fn equilibrium_defect(model: &dyn ControlAffine) -> Option<f64> {
    let f0 = model.drift(&DVector::zeros(model.state_dim()));
    let defect = f0.amax();
    if defect > 1e-12 {
        log::warn!("model `{}`: f(0) != 0 (|f(0)|_inf = {defect:e}); origin is not an equilibrium", model.name());
        Some(defect)
    } else {
        None
    }
}

/// Jacobian of `f` and value of `g` at the origin.
pub fn linearize(model: &dyn ControlAffine) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let origin = DVector::zeros(n);
    let step = fd_step(&origin);
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut up = origin.clone();
        let mut down = origin.clone();
        up[j] = step;
        down[j] = -step;
        let col = (model.drift(&up) - model.drift(&down)) / (2.0 * step);
        a.set_column(j, &col);
    }
    (a, model.input_matrix(&origin))
}

/// Axis-aligned working domain. Must contain the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidDomain("bound lengths differ or are empty".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) {
                return Err(Error::InvalidDomain(format!("lower[{i}] = {lo} is not below upper[{i}] = {hi}")));
            }
            if *lo > 0.0 || *hi < 0.0 {
                return Err(Error::InvalidDomain(format!("dimension {i} does not contain the origin")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-half, half]^n`.
    pub fn symmetric(n: usize, half: f64) -> Result<Self> {
        Self::new(vec![-half; n], vec![half; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    pub fn contains(&self, x: &StateVector) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateVector {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
        )
    }
}

/// The two-input nonlinear benchmark:
/// `x1' = sin(x2) + 2 x1 + u1 + 0.5 u2`, `x2' = 0.5 x1^3 + x2 - u2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoStateExample;

impl ControlAffine for TwoStateExample {
    fn name(&self) -> &str {
        "paper-example"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &StateVector) -> StateVector {
        DVector::from_vec(vec![x[1].sin() + 2.0 * x[0], 0.5 * x[0].powi(3) + x[1]])
    }
    fn input_matrix(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, -1.0])
    }
}

/// `x' = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarIntegrator;

impl ControlAffine for ScalarIntegrator {
    fn name(&self) -> &str {
        "scalar-integrator"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, _x: &StateVector) -> StateVector {
        DVector::zeros(1)
    }
    fn input_matrix(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
}

/// `x1' = x2`, `x2' = u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleIntegrator;

impl ControlAffine for DoubleIntegrator {
    fn name(&self) -> &str {
        "double-integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &StateVector) -> StateVector {
        DVector::from_vec(vec![x[1], 0.0])
    }
    fn input_matrix(&self, _x: &StateVector) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
    }
}

/// `x' = A x + B u`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Invalid("A must be square".into()));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::Dimension { expected: a.nrows(), got: b.nrows() });
        }
        Ok(Self { a, b })
    }
}

impl ControlAffine for LinearSystem {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn drift(&self, x: &StateVector) -> StateVector {
        &self.a * x
    }
    fn input_matrix(&self, _x: &StateVector) -> DMatrix<f64> {
        self.b.clone()
    }
}

/// Compiled-in systems selectable by name.
pub fn system_by_name(name: &str) -> Option<Arc<dyn ControlAffine>> {
    match name {
        "paper-example" => Some(Arc::new(TwoStateExample)),
        "scalar-integrator" => Some(Arc::new(ScalarIntegrator)),
        "double-integrator" => Some(Arc::new(DoubleIntegrator)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> StateVector {
        DVector::from_column_slice(xs)
    }

    #[derive(Debug)]
    struct Quadratic;
    impl ScalarField for Quadratic {
        fn value(&self, x: &StateVector) -> f64 {
            (x[0] - 0.75).powi(2) + (x[1] + 0.6).powi(2) - 0.0625
        }
        fn gradient(&self, x: &StateVector) -> Option<StateVector> {
            Some(v(&[2.0 * (x[0] - 0.75), 2.0 * (x[1] + 0.6)]))
        }
    }

    #[derive(Debug)]
    struct Constant;
    impl ScalarField for Constant {
        fn value(&self, _x: &StateVector) -> f64 {
            3.0
        }
    }

    #[derive(Debug)]
    struct Wall;
    impl ScalarField for Wall {
        fn value(&self, x: &StateVector) -> f64 {
            1.0 - x[0]
        }
    }

    #[test]
    fn two_state_drift() {
        let f = eval_f(&TwoStateExample, &v(&[1.0, -0.8])).unwrap();
        assert_relative_eq!(f[0], (-0.8f64).sin() + 2.0, epsilon = 1e-15);
        assert_relative_eq!(f[0], 1.282644, epsilon = 1e-6);
        assert_relative_eq!(f[1], -0.3, epsilon = 1e-15);
        assert_eq!(eval_f(&TwoStateExample, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        let f = eval_f(&TwoStateExample, &v(&[0.0, std::f64::consts::FRAC_PI_2])).unwrap();
        assert_relative_eq!(f[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(f[1], std::f64::consts::FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn input_matrices() {
        let g = eval_g(&TwoStateExample, &v(&[0.3, 0.2])).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, -1.0]));
        assert_eq!(eval_g(&ScalarIntegrator, &v(&[4.0])).unwrap(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(
            eval_g(&DoubleIntegrator, &v(&[1.0, 2.0])).unwrap(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0])
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert_eq!(
            eval_f(&TwoStateExample, &v(&[1.0])).unwrap_err(),
            Error::Dimension { expected: 2, got: 1 }
        );
        assert!(eval_g(&ScalarIntegrator, &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn two_state_g_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dom = DomainBox::symmetric(2, 2.0).unwrap();
        let g0 = TwoStateExample.input_matrix(&v(&[0.0, 0.0]));
        for _ in 0..100 {
            assert_eq!(TwoStateExample.input_matrix(&dom.sample(&mut rng)), g0);
        }
    }

    #[test]
    fn lie_derivatives() {
        let x = v(&[1.0, -0.8]);
        let lf = lie_derivative(&TwoStateExample, &Quadratic, Direction::Drift, &x).unwrap();
        assert_relative_eq!(lf, 0.761322, epsilon = 1e-6);
        assert_eq!(lie_derivative(&TwoStateExample, &Constant, Direction::Drift, &x).unwrap(), 0.0);
        assert!(lie_derivative(&TwoStateExample, &Quadratic, Direction::InputColumn(2), &x).is_err());

        // Double integrator with h = 1 - x1: L_f h = -x2 and L_g L_f h = -1.
        let model: Arc<dyn ControlAffine> = Arc::new(DoubleIntegrator);
        let lfh = LieField { model: model.clone(), field: Arc::new(Wall), along: Direction::Drift };
        let y = v(&[0.3, 0.7]);
        assert_relative_eq!(lfh.value(&y), -0.7, epsilon = 1e-9);
        let lglfh = lie_derivative(model.as_ref(), &lfh, Direction::InputColumn(0), &y).unwrap();
        assert_relative_eq!(lglfh, -1.0, epsilon = 1e-8);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dom = DomainBox::symmetric(2, 2.0).unwrap();
        for _ in 0..1000 {
            let x = dom.sample(&mut rng);
            let analytic = lie_derivative(&TwoStateExample, &Quadratic, Direction::Drift, &x).unwrap();
            let numeric = central_gradient(|y| Quadratic.value(y), &x).unwrap().dot(&TwoStateExample.drift(&x));
            assert_relative_eq!(analytic, numeric, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn equilibrium_and_linearization() {
        assert!(equilibrium_defect(&TwoStateExample).is_none());
        let shifted = LinearSystem::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(equilibrium_defect(&shifted).is_none());
        let (a, b) = linearize(&TwoStateExample);
        assert_relative_eq!(a, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]), epsilon = 1e-9);
        assert_eq!(b, TwoStateExample.input_matrix(&v(&[0.0, 0.0])));
    }

    #[test]
    fn domain_validation() {
        assert!(DomainBox::new(vec![-1.0], vec![-1.0]).is_err());
        assert!(DomainBox::new(vec![0.5], vec![1.0]).is_err());
        assert!(DomainBox::new(vec![-1.0, -1.0], vec![1.0]).is_err());
        let d = DomainBox::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        assert_eq!(d.volume(), 16.0);
        assert!(d.contains(&v(&[0.0, 3.0])));
        assert!(!d.contains(&v(&[0.0, 3.1])));
    }

    #[test]
    fn named_systems() {
        for name in ["paper-example", "scalar-integrator", "double-integrator"] {
            assert_eq!(system_by_name(name).unwrap().name(), name);
        }
        assert!(system_by_name("pendulum").is_none());
    }
}
