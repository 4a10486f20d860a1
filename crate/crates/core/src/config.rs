//! Flat `key = value` problem configuration.
//!
//! One entry per line, `#` starts a comment. Vectors are whitespace-separated
//! numbers; matrices separate rows with `;`, and a single number `s` stands for
//! `s * I`. Unknown keys and duplicate keys (other than `ic`) are rejected.
//!
//! | key | value |
//! |-----|-------|
//! | `system` | `paper-example`, `scalar-integrator`, `double-integrator` or `linear` |
//! | `system.a`, `system.b` | matrices, required for `linear` |
//! | `cost.q`, `cost.r` | matrices |
//! | `barrier.kind` | `circle`, `halfspace` or `none` |
//! | `barrier.center`, `barrier.radius` | circle obstacle `|x - center| >= radius` |
//! | `barrier.normal`, `barrier.offset` | half-space `offset - normal . x >= 0` |
//! | `barrier.alpha` | comma-separated chain, each `linear g` or `power g p` |
//! | `domain.lower`, `domain.upper` | box corners |
//! | `basis.d_min`, `basis.d_max` | monomial degree range |
//! | `quad.order` | Gauss-Legendre points per axis |
//! | `sgsa.max_iter`, `sgsa.tol`, `sgsa.activity` | iteration settings |
//! | `sim.dt`, `sim.t_final`, `sim.stop_radius` | simulation settings |
//! | `init.gain` | optional initial feedback gain `u = -K x` |
//! | `verify.samples` | sample count for the property suites |
//! | `ic` | initial condition, repeatable |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::make_poly_basis;
use crate::cost::QuadraticCost;
use crate::error::{Error, Result};
use crate::galerkin::{ActivityMode, SgsaConfig};
use crate::models::{system_by_name, ControlAffine, DomainBox, LinearSystem, StateVector};
use crate::safety::{BarrierShape, BarrierSpec, CircleObstacle, ClassKappa, HalfSpace};
use crate::sim::SimConfig;
use crate::synthesis::Problem;

const KEYS: &[&str] = &[
    "system",
    "system.a",
    "system.b",
    "cost.q",
    "cost.r",
    "barrier.kind",
    "barrier.center",
    "barrier.radius",
    "barrier.normal",
    "barrier.offset",
    "barrier.alpha",
    "domain.lower",
    "domain.upper",
    "basis.d_min",
    "basis.d_max",
    "quad.order",
    "sgsa.max_iter",
    "sgsa.tol",
    "sgsa.activity",
    "sim.dt",
    "sim.t_final",
    "sim.stop_radius",
    "init.gain",
    "verify.samples",
    "ic",
];

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Named(String),
    Linear { a: DMatrix<f64>, b: DMatrix<f64> },
}

impl SystemSpec {
    pub fn build(&self) -> Result<Arc<dyn ControlAffine>> {
        match self {
            Self::Named(name) => {
                system_by_name(name).ok_or_else(|| Error::Invalid(format!("unknown system `{name}`")))
            }
            Self::Linear { a, b } => Ok(Arc::new(LinearSystem::new(a.clone(), b.clone())?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BarrierConfig {
    Circle { center: Vec<f64>, radius: f64, alphas: Vec<ClassKappa> },
    HalfSpace { normal: Vec<f64>, offset: f64, alphas: Vec<ClassKappa> },
}

impl BarrierConfig {
    pub fn build(&self) -> Result<BarrierSpec> {
        match self {
            Self::Circle { center, radius, alphas } => BarrierSpec::new(
                BarrierShape::Circle(CircleObstacle { center: DVector::from_column_slice(center), radius: *radius }),
                alphas.clone(),
            ),
            Self::HalfSpace { normal, offset, alphas } => BarrierSpec::new(
                BarrierShape::HalfSpace(HalfSpace { normal: DVector::from_column_slice(normal), offset: *offset }),
                alphas.clone(),
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub system: SystemSpec,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub barrier: Option<BarrierConfig>,
    pub domain: DomainBox,
    pub d_min: u32,
    pub d_max: u32,
    pub sgsa: SgsaConfig,
    pub sim: SimConfig,
    pub initial_gain: Option<DMatrix<f64>>,
    pub verify_samples: usize,
    pub initial_conditions: Vec<StateVector>,
}

impl ProblemConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { line: 0, message: format!("{}: {e}", path.display()) })?;
        text.parse()
    }

    /// Builds the synthesis problem; dimensions are checked against the model.
    pub fn problem(&self) -> Result<Problem> {
        let model = self.system.build()?;
        let (n, m) = (model.state_dim(), model.input_dim());
        let shape_err = |what: &str, rows: usize, cols: usize| {
            Error::Invalid(format!("{what} is {rows}x{cols}, system has n = {n}, m = {m}"))
        };
        if self.q.shape() != (n, n) {
            return Err(shape_err("cost.q", self.q.nrows(), self.q.ncols()));
        }
        if self.r.shape() != (m, m) {
            return Err(shape_err("cost.r", self.r.nrows(), self.r.ncols()));
        }
        if self.domain.dim() != n {
            return Err(Error::Dimension { expected: n, got: self.domain.dim() });
        }
        if let Some(k) = &self.initial_gain {
            if k.shape() != (m, n) {
                return Err(shape_err("init.gain", k.nrows(), k.ncols()));
            }
        }
        for ic in &self.initial_conditions {
            if ic.len() != n {
                return Err(Error::Dimension { expected: n, got: ic.len() });
            }
        }
        let barrier = self.barrier.as_ref().map(BarrierConfig::build).transpose()?;
        if let Some(b) = &barrier {
            let dim = match b.shape() {
                BarrierShape::Circle(c) => c.center.len(),
                BarrierShape::HalfSpace(h) => h.normal.len(),
                BarrierShape::Field(_) => n,
            };
            if dim != n {
                return Err(Error::Dimension { expected: n, got: dim });
            }
        }
        Ok(Problem {
            model,
            cost: QuadraticCost::new(self.q.clone(), self.r.clone())?,
            barrier,
            domain: self.domain.clone(),
            basis: make_poly_basis(n, self.d_min, self.d_max)?,
            sgsa: self.sgsa.clone(),
            initial_gain: self.initial_gain.clone(),
        })
    }
}

fn cfg_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| cfg_err(line, format!("`{key}`: cannot parse `{s}`")))
}

fn parse_vec(line: usize, key: &str, s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s.split_whitespace().map(|t| parse_num(line, key, t)).collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(cfg_err(line, format!("`{key}` is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(cfg_err(line, format!("`{key}` has non-finite entries")));
    }
    Ok(v)
}

/// Rows separated by `;`. A lone scalar `s` becomes `s * I` of size `identity_dim`.
fn parse_matrix(line: usize, key: &str, s: &str, identity_dim: Option<usize>) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = s.split(';').map(|r| parse_vec(line, key, r)).collect::<Result<_>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        if let Some(d) = identity_dim {
            return Ok(DMatrix::identity(d, d) * rows[0][0]);
        }
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(cfg_err(line, format!("`{key}`: ragged matrix rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

fn parse_alphas(line: usize, s: &str) -> Result<Vec<ClassKappa>> {
    s.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.split_whitespace().collect();
            let kappa = match parts.as_slice() {
                ["linear", g] => ClassKappa::linear(parse_num(line, "barrier.alpha", g)?),
                ["power", g, p] => ClassKappa::odd_power(
                    parse_num(line, "barrier.alpha", g)?,
                    parse_num(line, "barrier.alpha", p)?,
                ),
                _ => return Err(cfg_err(line, format!("bad class-K entry `{}`", item.trim()))),
            };
            kappa.map_err(|e| cfg_err(line, e.to_string()))
        })
        .collect()
}

struct Entries {
    values: BTreeMap<&'static str, (usize, String)>,
    ics: Vec<(usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.values.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or_else(|| cfg_err(0, format!("missing required key `{key}`")))
    }

    fn num_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            Some((line, v)) => parse_num(line, key, &v),
            None => Ok(default),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut entries = Entries { values: BTreeMap::new(), ics: Vec::new() };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) =
            content.split_once('=').ok_or_else(|| cfg_err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        let value = value.trim().to_string();
        let known = KEYS.iter().find(|k| **k == key).ok_or_else(|| cfg_err(line, format!("unknown key `{key}`")))?;
        if *known == "ic" {
            entries.ics.push((line, value));
        } else if entries.values.insert(known, (line, value)).is_some() {
            return Err(cfg_err(line, format!("duplicate key `{key}`")));
        }
    }
    Ok(entries)
}

fn barrier_from(e: &mut Entries) -> Result<Option<BarrierConfig>> {
    let (kind_line, kind) = e.take("barrier.kind").unwrap_or((0, "none".to_string()));
    let alphas = |e: &mut Entries| -> Result<Vec<ClassKappa>> {
        let (la, a) = e.required("barrier.alpha")?;
        parse_alphas(la, &a)
    };
    let barrier = match kind.as_str() {
        "none" => None,
        "circle" => {
            let (lc, c) = e.required("barrier.center")?;
            let (lr, rad) = e.required("barrier.radius")?;
            Some(BarrierConfig::Circle {
                center: parse_vec(lc, "barrier.center", &c)?,
                radius: parse_num(lr, "barrier.radius", &rad)?,
                alphas: alphas(e)?,
            })
        }
        "halfspace" => {
            let (ln, nv) = e.required("barrier.normal")?;
            let (lo, off) = e.required("barrier.offset")?;
            Some(BarrierConfig::HalfSpace {
                normal: parse_vec(ln, "barrier.normal", &nv)?,
                offset: parse_num(lo, "barrier.offset", &off)?,
                alphas: alphas(e)?,
            })
        }
        other => return Err(cfg_err(kind_line, format!("unknown barrier kind `{other}`"))),
    };
    if let Some(b) = &barrier {
        b.build().map_err(|err| cfg_err(kind_line, err.to_string()))?;
    }
    Ok(barrier)
}

/// Parses text containing only `barrier.*` keys.
pub fn parse_barrier_block(text: &str) -> Result<Option<BarrierConfig>> {
    let mut e = tokenize(text)?;
    let barrier = barrier_from(&mut e)?;
    if let Some((line, key)) = e.values.iter().next().map(|(k, (l, _))| (*l, *k)).or(e.ics.first().map(|(l, _)| (*l, "ic"))) {
        return Err(cfg_err(line, format!("key `{key}` is not a barrier key")));
    }
    Ok(barrier)
}

impl std::str::FromStr for ProblemConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut e = tokenize(text)?;

        let (line, system) = e.required("system")?;
        let system = if system == "linear" {
            let (la, a) = e.required("system.a")?;
            let (lb, b) = e.required("system.b")?;
            SystemSpec::Linear { a: parse_matrix(la, "system.a", &a, None)?, b: parse_matrix(lb, "system.b", &b, None)? }
        } else {
            if system_by_name(&system).is_none() {
                return Err(cfg_err(line, format!("unknown system `{system}`")));
            }
            SystemSpec::Named(system)
        };
        let probe = system.build().map_err(|err| cfg_err(line, err.to_string()))?;
        let (n, m) = (probe.state_dim(), probe.input_dim());

        let (lq, q) = e.required("cost.q")?;
        let q = parse_matrix(lq, "cost.q", &q, Some(n))?;
        let (lr, r) = e.required("cost.r")?;
        let r = parse_matrix(lr, "cost.r", &r, Some(m))?;

        let barrier = barrier_from(&mut e)?;

        let (ll, lower) = e.required("domain.lower")?;
        let (lu, upper) = e.required("domain.upper")?;
        let domain = DomainBox::new(parse_vec(ll, "domain.lower", &lower)?, parse_vec(lu, "domain.upper", &upper)?)
            .map_err(|err| cfg_err(ll, err.to_string()))?;

        let d_min = e.num_or("basis.d_min", 2u32)?;
        let d_max = e.num_or("basis.d_max", 6u32)?;
        if d_min < 2 {
            return Err(cfg_err(0, "basis.d_min must be at least 2 so that V(0) = 0 with zero gradient"));
        }
        if d_max < d_min {
            return Err(cfg_err(0, "basis.d_max must be at least basis.d_min"));
        }

        let defaults = SgsaConfig::default();
        let activity_mode = match e.take("sgsa.activity") {
            Some((l, v)) => v.parse().map_err(|err: Error| cfg_err(l, err.to_string()))?,
            None => ActivityMode::default(),
        };
        let sgsa = SgsaConfig {
            quad_order: e.num_or("quad.order", defaults.quad_order)?,
            max_iter: e.num_or("sgsa.max_iter", defaults.max_iter)?,
            tol: e.num_or("sgsa.tol", defaults.tol)?,
            activity_mode,
        };
        sgsa.validate().map_err(|err| cfg_err(0, err.to_string()))?;

        let sim_defaults = SimConfig::default();
        let sim = SimConfig {
            dt: e.num_or("sim.dt", sim_defaults.dt)?,
            t_final: e.num_or("sim.t_final", sim_defaults.t_final)?,
            stop_radius: e.num_or("sim.stop_radius", sim_defaults.stop_radius)?,
        };
        sim.validate().map_err(|err| cfg_err(0, err.to_string()))?;

        let initial_gain = match e.take("init.gain") {
            Some((l, v)) => Some(parse_matrix(l, "init.gain", &v, None)?),
            None => None,
        };
        let verify_samples = e.num_or("verify.samples", 1000usize)?;
        let initial_conditions = e
            .ics
            .iter()
            .map(|(l, v)| {
                let x = parse_vec(*l, "ic", v)?;
                if x.len() != n {
                    return Err(cfg_err(*l, format!("initial condition has {} entries, system has {n}", x.len())));
                }
                Ok(DVector::from_vec(x))
            })
            .collect::<Result<_>>()?;

        if let Some((line, key)) = e.values.iter().next().map(|(k, (l, _))| (*l, *k)) {
            return Err(cfg_err(line, format!("key `{key}` does not apply to this configuration")));
        }

        Ok(ProblemConfig {
            system,
            q,
            r,
            barrier,
            domain,
            d_min,
            d_max,
            sgsa,
            sim,
            initial_gain,
            verify_samples,
            initial_conditions,
        })
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("; ")
}

fn fmt_alphas(alphas: &[ClassKappa]) -> String {
    alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
}

/// Writes the configuration back in the same format; parsing the output
/// reproduces an equal configuration.
impl fmt::Display for ProblemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.system {
            SystemSpec::Named(name) => writeln!(f, "system = {name}")?,
            SystemSpec::Linear { a, b } => {
                writeln!(f, "system = linear")?;
                writeln!(f, "system.a = {}", fmt_matrix(a))?;
                writeln!(f, "system.b = {}", fmt_matrix(b))?;
            }
        }
        writeln!(f, "cost.q = {}", fmt_matrix(&self.q))?;
        writeln!(f, "cost.r = {}", fmt_matrix(&self.r))?;
        match &self.barrier {
            None => writeln!(f, "barrier.kind = none")?,
            Some(BarrierConfig::Circle { center, radius, alphas }) => {
                writeln!(f, "barrier.kind = circle")?;
                writeln!(f, "barrier.center = {}", fmt_vec(center))?;
                writeln!(f, "barrier.radius = {radius}")?;
                writeln!(f, "barrier.alpha = {}", fmt_alphas(alphas))?;
            }
            Some(BarrierConfig::HalfSpace { normal, offset, alphas }) => {
                writeln!(f, "barrier.kind = halfspace")?;
                writeln!(f, "barrier.normal = {}", fmt_vec(normal))?;
                writeln!(f, "barrier.offset = {offset}")?;
                writeln!(f, "barrier.alpha = {}", fmt_alphas(alphas))?;
            }
        }
        writeln!(f, "domain.lower = {}", fmt_vec(self.domain.lower()))?;
        writeln!(f, "domain.upper = {}", fmt_vec(self.domain.upper()))?;
        writeln!(f, "basis.d_min = {}", self.d_min)?;
        writeln!(f, "basis.d_max = {}", self.d_max)?;
        writeln!(f, "quad.order = {}", self.sgsa.quad_order)?;
        writeln!(f, "sgsa.max_iter = {}", self.sgsa.max_iter)?;
        writeln!(f, "sgsa.tol = {:e}", self.sgsa.tol)?;
        writeln!(f, "sgsa.activity = {}", self.sgsa.activity_mode)?;
        writeln!(f, "sim.dt = {:e}", self.sim.dt)?;
        writeln!(f, "sim.t_final = {}", self.sim.t_final)?;
        writeln!(f, "sim.stop_radius = {:e}", self.sim.stop_radius)?;
        if let Some(k) = &self.initial_gain {
            writeln!(f, "init.gain = {}", fmt_matrix(k))?;
        }
        writeln!(f, "verify.samples = {}", self.verify_samples)?;
        for ic in &self.initial_conditions {
            writeln!(f, "ic = {}", fmt_vec(ic.as_slice()))?;
        }
        Ok(())
    }
}
