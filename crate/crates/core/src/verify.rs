//! Seeded property suites over the safety formulas and a synthesized controller.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{hjb_residual, u_safe, u_unconstrained, Plant, ResidualForm, ValueFn};
use crate::error::Result;
use crate::models::{DomainBox, StateVector};
use crate::safety::{
    c_s, constraint_data, eta_h, evaluate_constraint, lambda_multiplier, min_norm_filter, rbar, safety_terms,
    BarrierSpec, ConstraintData, PsiChain,
};

/// Outcome of one suite. `worst` is the largest observed violation measure
/// (for the continuity suite, the smallest halving ratio).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub samples: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.failures == 0
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_spd<R: Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(m, m) * rng.random_range(0.05..2.0)
}

fn random_vec<R: Rng>(m: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.random_range(-scale..scale))
}

/// Samples a state in the domain with `h >= 0`, up to a bounded number of tries.
fn sample_safe<R: Rng>(domain: &DomainBox, barrier: &BarrierSpec, rng: &mut R) -> Option<StateVector> {
    (0..10_000).map(|_| domain.sample(rng)).find(|x| barrier.h(x) >= 0.0)
}

/// Multiplier sign, complementary slackness, activity and the inactive branch.
pub fn kkt_suite<R: Rng>(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    domain: &DomainBox,
    samples: usize,
    rng: &mut R,
) -> Result<SuiteReport> {
    let tol = 1e-8;
    let (mut failures, mut worst, mut done) = (0, 0.0f64, 0);
    for _ in 0..samples {
        let Some(x) = sample_safe(domain, barrier, rng) else { break };
        let data = evaluate_constraint(barrier, &plant.model, &x)?;
        if data.is_degenerate() {
            continue;
        }
        done += 1;
        let (u, lambda) = u_safe(value, barrier, plant, &x)?;
        let unc = u_unconstrained(value, plant, &x);
        let slack = c_s(&data, &u);
        let mut bad = lambda < 0.0 || (lambda * slack).abs() > tol;
        worst = worst.max((lambda * slack).abs()).max(-lambda);
        if c_s(&data, &unc) < 0.0 {
            bad |= slack.abs() > tol;
            worst = worst.max(slack.abs());
        } else {
            bad |= u != unc || lambda != 0.0;
        }
        failures += usize::from(bad);
    }
    Ok(SuiteReport { name: "kkt", samples: done, failures, worst, tolerance: tol })
}

/// Symmetry, PSD, eigenvalue bound and null direction of `Rbar`; exact zero for one input.
pub fn rbar_suite<R: Rng>(samples: usize, rng: &mut R) -> Result<SuiteReport> {
    let tol = 1e-10;
    let (mut failures, mut worst) = (0, 0.0f64);
    for k in 0..samples {
        let m = 1 + k % 4;
        let r = random_spd(m, rng);
        let a = random_vec(m, 2.0, rng);
        let data = ConstraintData { a: a.clone(), b: 0.0, psi: PsiChain { values: vec![] } };
        let rb = rbar(&data, &r)?;
        if m == 1 {
            failures += usize::from(rb[(0, 0)] != 0.0);
            continue;
        }
        let asym = (&rb - rb.transpose()).amax();
        let eig = rb.clone().symmetric_eigen().eigenvalues;
        let lambda_min_r = r.clone().symmetric_eigen().eigenvalues.min();
        let below = (-eig.min()).max(0.0);
        let above = (eig.max() - 1.0 / lambda_min_r).max(0.0);
        let null = (&rb * &a).amax();
        let measure = asym.max(below).max(above).max(null);
        worst = worst.max(measure);
        failures += usize::from(measure > tol);
    }
    Ok(SuiteReport { name: "rbar", samples, failures, worst, tolerance: tol })
}

/// Multiplier form against the closed form at active states.
pub fn controller_form_suite<R: Rng>(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    domain: &DomainBox,
    samples: usize,
    rng: &mut R,
) -> Result<SuiteReport> {
    let tol = 1e-10;
    let (mut failures, mut worst, mut done) = (0, 0.0f64, 0);
    for _ in 0..samples * 1000 {
        if done == samples {
            break;
        }
        let Some(x) = sample_safe(domain, barrier, rng) else { break };
        let data = evaluate_constraint(barrier, &plant.model, &x)?;
        let unc = u_unconstrained(value, plant, &x);
        if data.is_degenerate() || c_s(&data, &unc) >= 0.0 {
            continue;
        }
        done += 1;
        let lgv = plant.model.input_matrix(&x).transpose() * value.gradient(&x);
        let lambda = lambda_multiplier(&data, plant.cost.r(), &lgv)?;
        let (eta, _) = eta_h(&data, plant.cost.r())?;
        let multiplier_form = &unc + eta * lambda;
        let terms = safety_terms(data, plant.cost.r())?;
        let closed_form = -(&terms.rbar * &lgv + &terms.u_cbf);
        let gap = (multiplier_form - closed_form).norm();
        worst = worst.max(gap);
        failures += usize::from(gap > tol);
    }
    Ok(SuiteReport { name: "controller-form", samples: done, failures, worst, tolerance: tol })
}

/// Direct and transformed HJB residuals at random safe states.
pub fn residual_form_suite<R: Rng>(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    domain: &DomainBox,
    samples: usize,
    rng: &mut R,
) -> Result<SuiteReport> {
    let tol = 1e-8;
    let (mut failures, mut worst, mut done) = (0, 0.0f64, 0);
    for _ in 0..samples {
        let Some(x) = sample_safe(domain, barrier, rng) else { break };
        if evaluate_constraint(barrier, &plant.model, &x)?.is_degenerate() {
            continue;
        }
        done += 1;
        let direct = hjb_residual(value, Some(barrier), plant, &x, ResidualForm::Direct)?;
        let transformed = hjb_residual(value, Some(barrier), plant, &x, ResidualForm::Transformed)?;
        let gap = (direct - transformed).abs() / direct.abs().max(1.0);
        worst = worst.max(gap);
        failures += usize::from(gap > tol);
    }
    Ok(SuiteReport { name: "residual-forms", samples: done, failures, worst, tolerance: tol })
}

/// Projection of `u_nom` onto `{u : b + a.u >= 0}` by nested grid search.
///
/// An infeasible nominal projects onto the boundary plane, so the search runs
/// over that plane: every coordinate but the one with the largest `|a_k|` is
/// gridded and the remaining one is solved from `b + a.u = 0`.
pub fn grid_projection_oracle(a: &DVector<f64>, b: f64, u_nom: &DVector<f64>) -> DVector<f64> {
    let m = a.len();
    if b + a.dot(u_nom) >= 0.0 || m == 0 {
        return u_nom.clone();
    }
    let pivot = a.iamax();
    let free: Vec<usize> = (0..m).filter(|i| *i != pivot).collect();
    let lift = |t: &[f64]| {
        let mut u = DVector::zeros(m);
        for (slot, &i) in free.iter().enumerate() {
            u[i] = t[slot];
        }
        let rest: f64 = free.iter().map(|&i| a[i] * u[i]).sum();
        u[pivot] = -(b + rest) / a[pivot];
        u
    };
    if free.is_empty() {
        return lift(&[]);
    }
    let points = 41usize;
    let mut center: Vec<f64> = free.iter().map(|&i| u_nom[i]).collect();
    let mut half = 2.0 * (b + a.dot(u_nom)).abs() / a.norm() + 1.0;
    for _ in 0..40 {
        let step = 2.0 * half / (points - 1) as f64;
        let mut best = (f64::INFINITY, center.clone());
        for idx in 0..points.pow(free.len() as u32) {
            let mut rest = idx;
            let t: Vec<f64> = center
                .iter()
                .map(|c| {
                    let k = rest % points;
                    rest /= points;
                    c - half + step * k as f64
                })
                .collect();
            let dist = (lift(&t) - u_nom).norm_squared();
            if dist < best.0 {
                best = (dist, t);
            }
        }
        center = best.1;
        half = 2.0 * step;
    }
    lift(&center)
}

/// Min-norm filter against the grid oracle on random half-space instances.
pub fn min_norm_suite<R: Rng>(samples: usize, rng: &mut R) -> Result<SuiteReport> {
    let tol = 2e-3;
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..samples {
        let a = random_vec(2, 2.0, rng);
        let b = rng.random_range(-3.0..3.0);
        let u_nom = random_vec(2, 2.0, rng);
        let data = ConstraintData { a: a.clone(), b, psi: PsiChain { values: vec![] } };
        let filtered = min_norm_filter(&data, &u_nom)?;
        let oracle = grid_projection_oracle(&a, b, &u_nom);
        let gap = (&filtered - oracle).norm();
        let slack = c_s(&data, &filtered);
        worst = worst.max(gap);
        failures += usize::from(gap > tol || slack < -1e-12);
    }
    Ok(SuiteReport { name: "min-norm-oracle", samples, failures, worst, tolerance: tol })
}

/// Largest sample-to-sample jump of the safe control along `x0 -> x1` with `steps` intervals.
pub fn max_jump(value: &ValueFn, barrier: &BarrierSpec, plant: &Plant, x0: &StateVector, x1: &StateVector, steps: usize) -> Result<f64> {
    let mut prev = u_safe(value, barrier, plant, x0)?.0;
    let mut worst = 0.0f64;
    for k in 1..=steps {
        let x = x0 + (x1 - x0) * (k as f64 / steps as f64);
        let u = u_safe(value, barrier, plant, &x)?.0;
        worst = worst.max((&u - &prev).norm());
        prev = u;
    }
    Ok(worst)
}

/// Best two-halving jump ratio, refining from 1024 to 32768 steps.
///
/// Strong curvature near a segment end keeps coarse grids pre-asymptotic, so
/// the grid is refined until the ratio settles. A jump discontinuity stays
/// near 1 and a square-root kink near 1.41 at every level.
fn halving_ratio(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    x0: &StateVector,
    x1: &StateVector,
    threshold: f64,
) -> Result<f64> {
    let mut jumps = Vec::new();
    let mut best = 0.0f64;
    for level in 0..6 {
        jumps.push(max_jump(value, barrier, plant, x0, x1, 1024 << level)?);
        if let [.., a, b, c] = jumps[..] {
            let ratio = (a / b).min(b / c);
            best = best.max(ratio);
            if ratio >= threshold {
                break;
            }
        }
    }
    Ok(best)
}

fn is_active(value: &ValueFn, barrier: &BarrierSpec, plant: &Plant, x: &StateVector) -> Result<bool> {
    let data = constraint_data(barrier, &plant.model, x)?;
    Ok(c_s(&data, &u_unconstrained(value, plant, x)) < 0.0)
}

/// Segments between an inactive and an active safe state; the max jump must
/// shrink by at least 1.8 over two successive step halvings.
pub fn continuity_suite<R: Rng>(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    domain: &DomainBox,
    segments: usize,
    rng: &mut R,
) -> Result<SuiteReport> {
    let threshold = 1.8;
    let (mut failures, mut worst, mut done) = (0, f64::INFINITY, 0);
    for _ in 0..segments * 2000 {
        if done == segments {
            break;
        }
        let Some(x0) = sample_safe(domain, barrier, rng) else { break };
        let x1 = &x0 + random_vec(x0.len(), 0.25, rng);
        if !domain.contains(&x1) || barrier.h(&x1) < 0.0 {
            continue;
        }
        let (Ok(a0), Ok(a1)) = (is_active(value, barrier, plant, &x0), is_active(value, barrier, plant, &x1)) else {
            continue;
        };
        if a0 == a1 {
            continue;
        }
        // Keep the whole segment in the safe set.
        if (1..20).any(|k| barrier.h(&(&x0 + (&x1 - &x0) * (k as f64 / 20.0))) < 0.0) {
            continue;
        }
        done += 1;
        let ratio = halving_ratio(value, barrier, plant, &x0, &x1, threshold)?;
        worst = worst.min(ratio);
        failures += usize::from(!(ratio >= threshold));
    }
    Ok(SuiteReport { name: "continuity", samples: done, failures, worst, tolerance: threshold })
}

/// Every suite, each with its own stream derived from `seed`.
pub fn run_all(
    value: &ValueFn,
    barrier: &BarrierSpec,
    plant: &Plant,
    domain: &DomainBox,
    samples: usize,
    seed: u64,
) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        kkt_suite(value, barrier, plant, domain, samples, &mut rng(seed))?,
        rbar_suite(samples / 2, &mut rng(seed + 1))?,
        controller_form_suite(value, barrier, plant, domain, samples / 2, &mut rng(seed + 2))?,
        residual_form_suite(value, barrier, plant, domain, samples / 2, &mut rng(seed + 3))?,
        min_norm_suite(samples / 5, &mut rng(seed + 4))?,
        continuity_suite(value, barrier, plant, domain, (samples / 50).max(1), &mut rng(seed + 5))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn oracle_projects_onto_half_space() {
        let a = DVector::from_column_slice(&[1.0, 0.0]);
        let u = grid_projection_oracle(&a, -1.0, &DVector::from_column_slice(&[0.0, 0.3]));
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(u[1], 0.3, epsilon = 1e-6);
        let feasible = DVector::from_column_slice(&[2.0, 0.0]);
        assert_eq!(grid_projection_oracle(&a, -1.0, &feasible), feasible);
    }

    #[test]
    fn formula_suites_pass() {
        let r = rbar_suite(200, &mut rng(1)).unwrap();
        assert!(r.passed(), "{r:?}");
        let r = min_norm_suite(50, &mut rng(2)).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn suites_are_seed_reproducible() {
        assert_eq!(min_norm_suite(20, &mut rng(9)).unwrap(), min_norm_suite(20, &mut rng(9)).unwrap());
    }
}
