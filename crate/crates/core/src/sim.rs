//! Closed-loop simulation with RK4, cost accumulation and safety/Lyapunov monitors.

use std::io::Write;

use nalgebra::DVector;

use crate::control::{hjb_residual, Controller, Plant, ResidualForm, ValueFn};
use crate::error::{Error, Result};
use crate::models::{closed_loop, DomainBox, StateVector};
use crate::safety::{psi_chain, BarrierSpec};

/// Samples with `h` below `-SAFETY_TOL` count as violations.
pub const SAFETY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Stop once `|x| < stop_radius`.
    pub stop_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 10.0, stop_radius: 1e-4 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0 && self.stop_radius >= 0.0) {
            return Err(Error::Invalid("need dt > 0, t_final > 0, stop_radius >= 0".into()));
        }
        Ok(())
    }
}

/// Time-stamped closed-loop samples. `running_cost[k]` is the integral of
/// `Q(x) + 1/2 u^T R u` up to `times[k]`.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub controls: Vec<DVector<f64>>,
    pub h_values: Vec<f64>,
    pub psi_min: Vec<f64>,
    pub running_cost: Vec<f64>,
    pub lambda_trace: Vec<f64>,
    /// Set when the state left the configured domain at some sample.
    pub left_domain: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.running_cost.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&StateVector> {
        self.states.last()
    }

    /// CSV with header `t,x1..xn,u1..um,h,psi_min,lambda,cost`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend(["h", "psi_min", "lambda", "cost"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![fmt_sig(self.times[k])];
            row.extend(self.states[k].iter().map(|v| fmt_sig(*v)));
            row.extend(self.controls[k].iter().map(|v| fmt_sig(*v)));
            row.push(fmt_sig(self.h_values[k]));
            row.push(fmt_sig(self.psi_min[k]));
            row.push(fmt_sig(self.lambda_trace[k]));
            row.push(fmt_sig(self.running_cost[k]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 12 significant digits in scientific notation.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    format!("{v:.11e}")
}

fn check_finite(x: &DVector<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One classical Runge-Kutta step of `x' = deriv(x)`.
pub fn rk4_step<F>(deriv: F, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = deriv(x)?;
    check_finite(&k1, "rk4 stage 1")?;
    let k2 = deriv(&(x + &k1 * (0.5 * dt)))?;
    check_finite(&k2, "rk4 stage 2")?;
    let k3 = deriv(&(x + &k2 * (0.5 * dt)))?;
    check_finite(&k3, "rk4 stage 3")?;
    let k4 = deriv(&(x + &k3 * dt))?;
    check_finite(&k4, "rk4 stage 4")?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    check_finite(&next, "rk4 update")?;
    Ok(next)
}

/// Integrates the closed loop from `x0`; the controller is evaluated at every
/// RK4 stage and the running cost is integrated as an augmented state.
pub fn simulate(
    plant: &Plant,
    controller: &Controller,
    barrier: Option<&BarrierSpec>,
    domain: Option<&DomainBox>,
    x0: &StateVector,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = plant.model.state_dim();
    if x0.len() != n {
        return Err(Error::Dimension { expected: n, got: x0.len() });
    }
    let deriv = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let x = z.rows(0, n).into_owned();
        let u = controller.eval(&x)?.u;
        let dx = closed_loop(plant.model.as_ref(), &x, &u);
        let mut dz = DVector::zeros(n + 1);
        dz.rows_mut(0, n).copy_from(&dx);
        dz[n] = plant.cost.running_cost(&x, &u);
        Ok(dz)
    };

    let mut traj = Trajectory::default();
    let record = |traj: &mut Trajectory, t: f64, z: &DVector<f64>| -> Result<()> {
        let x = z.rows(0, n).into_owned();
        let out = controller.eval(&x)?;
        let (h, psi_min) = match barrier {
            Some(spec) => (spec.h(&x), psi_chain(spec, &plant.model, &x)?.min()),
            None => (f64::NAN, f64::NAN),
        };
        if let Some(dom) = domain {
            if !traj.left_domain && !dom.contains(&x) {
                log::warn!("state {:?} left the synthesis domain at t = {t}; controller is extrapolating", x.as_slice());
                traj.left_domain = true;
            }
        }
        traj.times.push(t);
        traj.states.push(x);
        traj.controls.push(out.u);
        traj.h_values.push(h);
        traj.psi_min.push(psi_min);
        traj.lambda_trace.push(out.lambda);
        traj.running_cost.push(z[n]);
        Ok(())
    };

    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    record(&mut traj, 0.0, &z)?;
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    for k in 1..=steps {
        if z.rows(0, n).norm() < cfg.stop_radius {
            break;
        }
        z = rk4_step(deriv, &z, cfg.dt)?;
        record(&mut traj, k as f64 * cfg.dt, &z)?;
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub min_h: f64,
    pub min_psi: f64,
    pub violations: usize,
}

pub fn safety_report(traj: &Trajectory) -> Result<SafetyReport> {
    if traj.is_empty() {
        return Err(Error::Invalid("empty trajectory".into()));
    }
    let min_h = traj.h_values.iter().copied().fold(f64::INFINITY, f64::min);
    let min_psi = traj.psi_min.iter().copied().fold(f64::INFINITY, f64::min);
    let violations = traj.h_values.iter().filter(|h| **h < -SAFETY_TOL).count();
    Ok(SafetyReport { min_h, min_psi, violations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    /// `max_k (dV/dt + Q(x_k))` with `dV/dt = grad V . (f + g u)`.
    pub max_excess: f64,
    pub residual_bound: f64,
    /// `max_excess <= 2 * residual_bound`
    pub within_bound: bool,
}

/// Largest `|HJB residual|` along the trajectory samples.
pub fn residual_bound(traj: &Trajectory, value: &ValueFn, barrier: Option<&BarrierSpec>, plant: &Plant) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in &traj.states {
        worst = worst.max(hjb_residual(value, barrier, plant, x, ResidualForm::Direct)?.abs());
    }
    Ok(worst)
}

pub fn lyapunov_report(traj: &Trajectory, value: &ValueFn, plant: &Plant, residual_bound: f64) -> LyapunovReport {
    let max_excess = traj
        .states
        .iter()
        .zip(&traj.controls)
        .map(|(x, u)| {
            let xdot = closed_loop(plant.model.as_ref(), x, u);
            value.gradient(x).dot(&xdot) + plant.cost.state_cost(x)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    LyapunovReport { max_excess, residual_bound, within_bound: max_excess <= 2.0 * residual_bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_poly_basis;
    use crate::cost::QuadraticCost;
    use crate::models::ScalarIntegrator;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn scalar_plant(r: f64) -> Plant {
        Plant {
            model: Arc::new(ScalarIntegrator),
            cost: QuadraticCost::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, r)).unwrap(),
        }
    }

    #[test]
    fn rk4_basic_steps() {
        let x = v(&[1.5]);
        assert_eq!(rk4_step(|_| Ok(v(&[0.0])), &x, 0.1).unwrap(), x);
        assert_relative_eq!(rk4_step(|_| Ok(v(&[1.0])), &x, 0.5).unwrap()[0], 2.0);
        let y = rk4_step(|z| Ok(-z), &v(&[1.0]), 0.1).unwrap();
        assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);
        assert!(matches!(rk4_step(|_| Ok(v(&[f64::NAN])), &x, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn scalar_lqr_cost_matches_value() {
        let plant = scalar_plant(2.0);
        let ctl = Controller::linear(DMatrix::from_element(1, 1, 1.0));
        let cfg = SimConfig { dt: 1e-3, t_final: 10.0, stop_radius: 0.0 };
        let traj = simulate(&plant, &ctl, None, None, &v(&[1.0]), &cfg).unwrap();
        assert_relative_eq!(traj.final_state().unwrap()[0], (-10f64).exp(), max_relative = 1e-6);
        assert!((traj.total_cost() - 1.0).abs() < 1e-3);
        assert!(traj.running_cost.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn zero_control_constant_state() {
        let plant = scalar_plant(1.0);
        let cfg = SimConfig { dt: 0.01, t_final: 2.0, stop_radius: 0.0 };
        let traj = simulate(&plant, &Controller::zero(1), None, None, &v(&[0.5]), &cfg).unwrap();
        assert!(traj.states.iter().all(|x| x[0] == 0.5));
        assert_relative_eq!(traj.total_cost(), 0.25 * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_is_fourth_order_in_dt() {
        let plant = scalar_plant(2.0);
        let ctl = Controller::linear(DMatrix::from_element(1, 1, 1.0));
        let cost = |dt: f64| {
            let cfg = SimConfig { dt, t_final: 2.0, stop_radius: 0.0 };
            simulate(&plant, &ctl, None, None, &v(&[1.0]), &cfg).unwrap().total_cost()
        };
        let exact = 1.0 - (-4f64).exp();
        let e1 = (cost(0.2) - exact).abs();
        let e2 = (cost(0.1) - exact).abs();
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn stops_inside_radius() {
        let plant = scalar_plant(2.0);
        let ctl = Controller::linear(DMatrix::from_element(1, 1, 1.0));
        let cfg = SimConfig { dt: 1e-3, t_final: 100.0, stop_radius: 1e-2 };
        let traj = simulate(&plant, &ctl, None, None, &v(&[1.0]), &cfg).unwrap();
        assert!(traj.final_state().unwrap()[0] < 1e-2);
        assert!(*traj.times.last().unwrap() < 5.0);
    }

    #[test]
    fn csv_layout() {
        let plant = scalar_plant(2.0);
        let cfg = SimConfig { dt: 0.5, t_final: 1.0, stop_radius: 0.0 };
        let traj = simulate(&plant, &Controller::zero(1), None, None, &v(&[1.0]), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,h,psi_min,lambda,cost");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').nth(1).unwrap(), "1.00000000000e0");
    }

    #[test]
    fn lyapunov_exact_lqr() {
        let plant = scalar_plant(2.0);
        let value = ValueFn::new(make_poly_basis(1, 2, 2).unwrap(), v(&[1.0])).unwrap();
        let ctl = Controller::Unconstrained { value: value.clone(), plant: plant.clone() };
        let traj = simulate(&plant, &ctl, None, None, &v(&[1.0]), &SimConfig::default()).unwrap();
        let bound = residual_bound(&traj, &value, None, &plant).unwrap();
        assert!(bound < 1e-12);
        let report = lyapunov_report(&traj, &value, &plant, bound);
        // dV/dt + Q = -1/2 u^T R u <= 0
        assert!(report.max_excess <= 1e-8);

        let zero = ValueFn::new(value.basis.clone(), v(&[0.0])).unwrap();
        let report = lyapunov_report(&traj, &zero, &plant, 0.0);
        assert_relative_eq!(report.max_excess, 1.0);
        assert!(!report.within_bound);
    }

    #[test]
    fn safety_report_counts() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            h_values: vec![0.5, -1e-7, -0.1],
            psi_min: vec![0.5, -1e-7, -0.1],
            ..Default::default()
        };
        let r = safety_report(&traj).unwrap();
        assert_eq!((r.min_h, r.violations), (-0.1, 1));
        assert!(safety_report(&Trajectory::default()).is_err());
    }
}
