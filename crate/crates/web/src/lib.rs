//! Browser bindings for the bundled two-state obstacle problem: re-synthesize with a new
//! obstacle and input weight, simulate the three controllers from a clicked
//! state, and sample the value function and constraint activity on a grid.

use nalgebra::{DMatrix, DVector};
use wasm_bindgen::prelude::*;

use sgsa_core::config::{BarrierConfig, ProblemConfig};
use sgsa_core::control::{u_unconstrained, Controller};
use sgsa_core::safety::{c_s, constraint_data, psi_chain, ClassKappa};
use sgsa_core::sim::{safety_report, simulate};
use sgsa_core::synthesis::{synthesize, Problem, Synthesis};

const BASE_CONFIG: &str = include_str!("../../core/configs/paper-example.cfg");

fn js(e: sgsa_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    config: ProblemConfig,
    problem: Problem,
    synthesis: Synthesis,
}

impl Demo {
    fn build(center_x: f64, center_y: f64, radius: f64, gain: f64, r_weight: f64) -> sgsa_core::Result<Self> {
        let mut config: ProblemConfig = BASE_CONFIG.parse()?;
        config.barrier = Some(BarrierConfig::Circle {
            center: vec![center_x, center_y],
            radius,
            alphas: vec![ClassKappa::linear(gain)?],
        });
        config.r = DMatrix::identity(2, 2) * r_weight;
        let problem = config.problem()?;
        let synthesis = synthesize(&problem)?;
        Ok(Self { config, problem, synthesis })
    }

    fn controller(&self, kind: &str) -> Option<Controller> {
        match kind {
            "unconstrained" => Some(self.synthesis.nominal_controller()),
            "safe" => self.synthesis.safe_controller(),
            "min-norm" => self.synthesis.min_norm_controller(),
            _ => None,
        }
    }

    fn run(&self, kind: &str, x1: f64, x2: f64) -> sgsa_core::Result<Vec<f64>> {
        let controller = self
            .controller(kind)
            .ok_or_else(|| sgsa_core::Error::Invalid(format!("unknown controller `{kind}`")))?;
        let x0 = DVector::from_vec(vec![x1, x2]);
        let barrier = self.synthesis.barrier.as_ref();
        if let Some(b) = barrier {
            if !psi_chain(b, &self.problem.model, &x0)?.in_interior() {
                return Err(sgsa_core::Error::Invalid("start inside the obstacle".into()));
            }
        }
        let mut sim = self.config.sim.clone();
        sim.dt = 1e-2;
        let traj = simulate(&self.synthesis.plant, &controller, barrier, Some(&self.problem.domain), &x0, &sim)?;
        let min_h = safety_report(&traj).map(|r| r.min_h).unwrap_or(f64::NAN);
        let mut out = vec![traj.total_cost(), min_h];
        out.extend(traj.states.iter().flat_map(|x| [x[0], x[1]]));
        Ok(out)
    }

    fn grid_points(&self, n: usize) -> impl Iterator<Item = DVector<f64>> + '_ {
        let (lo, hi) = (self.problem.domain.lower(), self.problem.domain.upper());
        let step = move |k: usize, d: usize| lo[d] + (hi[d] - lo[d]) * (k as f64 + 0.5) / n as f64;
        // Row-major from the top edge, as canvas pixels are laid out.
        (0..n).flat_map(move |row| (0..n).map(move |col| DVector::from_vec(vec![step(col, 0), step(n - 1 - row, 1)])))
    }
}

#[wasm_bindgen]
impl Demo {
    /// Synthesizes the nominal and safe controllers for a circular obstacle.
    #[wasm_bindgen(constructor)]
    pub fn new(center_x: f64, center_y: f64, radius: f64, gain: f64, r_weight: f64) -> Result<Demo, JsError> {
        Self::build(center_x, center_y, radius, gain, r_weight).map_err(js)
    }

    pub fn summary(&self) -> String {
        let nominal = &self.synthesis.nominal;
        let mut text = format!("nominal: {} iterations, converged {}", nominal.iterations, nominal.converged);
        if let Some(safe) = &self.synthesis.safe {
            text.push_str(&format!("; safe: {} iterations, converged {}", safe.iterations, safe.converged));
        }
        text
    }

    /// `[x_min, x_max, y_min, y_max]`
    pub fn bounds(&self) -> Vec<f64> {
        let (lo, hi) = (self.problem.domain.lower(), self.problem.domain.upper());
        vec![lo[0], hi[0], lo[1], hi[1]]
    }

    /// `[cost, min h, x1, y1, x2, y2, ...]` for `unconstrained`, `safe` or `min-norm`.
    pub fn trajectory(&self, kind: &str, x1: f64, x2: f64) -> Result<Vec<f64>, JsError> {
        self.run(kind, x1, x2).map_err(js)
    }

    /// Safe value function on an `n x n` grid, row-major from the top edge.
    pub fn value_grid(&self, n: usize) -> Vec<f64> {
        let value = self.synthesis.safe_value.as_ref().unwrap_or(&self.synthesis.nominal_value);
        self.grid_points(n).map(|x| value.value(&x)).collect()
    }

    /// Per cell: 0 inside the obstacle, 1 constraint inactive, 2 active.
    pub fn activity_grid(&self, n: usize) -> Vec<u8> {
        let (Some(barrier), Some(value)) = (&self.synthesis.barrier, &self.synthesis.safe_value) else {
            return vec![1; n * n];
        };
        let plant = &self.synthesis.plant;
        self.grid_points(n)
            .map(|x| {
                if barrier.h(&x) < 0.0 {
                    return 0;
                }
                match constraint_data(barrier, &plant.model, &x) {
                    Ok(data) if c_s(&data, &u_unconstrained(value, plant, &x)) < 0.0 => 2,
                    _ => 1,
                }
            })
            .collect()
    }
}
