//! Plain-text artifacts: named matrices and controller files.
//!
//! A matrix block is a header line `matrix <name> <rows> <cols>` followed by
//! `rows` lines of `cols` numbers. Numbers are written in shortest round-trip
//! form, so reading a file back reproduces the values bit for bit.
//!
//! A controller file holds `key = value` lines (`kind`, `basis`, and the
//! barrier keys of the problem config) plus one matrix block: `coefficients`
//! for value-function controllers, `gain` for linear feedback.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::basis::make_poly_basis;
use crate::config::{parse_barrier_block, BarrierConfig};
use crate::control::{Controller, Plant, ValueFn};
use crate::error::{Error, Result};
use crate::safety::ClassKappa;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

pub fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
}

/// Named matrices plus the remaining `(line, text)` entries.
pub type Blocks = (Vec<(String, DMatrix<f64>)>, Vec<(usize, String)>);

/// Reads every matrix block; other non-comment lines are returned as `(line, text)`.
pub fn read_blocks(text: &str) -> Result<Blocks> {
    let mut matrices = Vec::new();
    let mut other = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()));
    while let Some((line, content)) = lines.next() {
        if content.is_empty() {
            continue;
        }
        let Some(header) = content.strip_prefix("matrix ") else {
            other.push((line, content.to_string()));
            continue;
        };
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols] = parts.as_slice() else {
            return Err(parse_err(line, "matrix header needs `name rows cols`"));
        };
        let rows: usize = rows.parse().map_err(|_| parse_err(line, "bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| parse_err(line, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (l, row) = lines.next().ok_or_else(|| parse_err(line, format!("matrix `{name}` is truncated")))?;
            let values: Vec<f64> = row
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(l, format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if values.len() != cols {
                return Err(parse_err(l, format!("expected {cols} values, found {}", values.len())));
            }
            data.extend(values);
        }
        matrices.push((name.to_string(), DMatrix::from_row_slice(rows, cols, &data)));
    }
    Ok((matrices, other))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Unconstrained,
    SafeOptimal,
    MinNorm,
    Linear,
}

impl ControllerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unconstrained => "unconstrained",
            Self::SafeOptimal => "safe-optimal",
            Self::MinNorm => "min-norm",
            Self::Linear => "linear",
        }
    }

    fn parse(line: usize, s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Self::Unconstrained),
            "safe-optimal" => Ok(Self::SafeOptimal),
            "min-norm" => Ok(Self::MinNorm),
            "linear" => Ok(Self::Linear),
            other => Err(parse_err(line, format!("unknown controller kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerLaw {
    /// State dimension, degree range and coefficients of the value function.
    Value { dim: usize, d_min: u32, d_max: u32, c: DVector<f64> },
    /// `u = -K x`
    Gain(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerFile {
    pub kind: ControllerKind,
    pub law: ControllerLaw,
    pub barrier: Option<BarrierConfig>,
}

impl ControllerFile {
    pub fn from_value(kind: ControllerKind, value: &ValueFn, barrier: Option<&BarrierConfig>) -> Result<Self> {
        if kind == ControllerKind::Linear {
            return Err(Error::Invalid("linear controllers carry a gain, not a value function".into()));
        }
        let (d_min, d_max) = value.basis.degrees();
        let file = Self {
            kind,
            law: ControllerLaw::Value { dim: value.basis.dim(), d_min, d_max, c: value.c.clone() },
            barrier: barrier.cloned(),
        };
        file.check()?;
        Ok(file)
    }

    pub fn linear(gain: DMatrix<f64>) -> Self {
        Self { kind: ControllerKind::Linear, law: ControllerLaw::Gain(gain), barrier: None }
    }

    fn check(&self) -> Result<()> {
        let needs_barrier = matches!(self.kind, ControllerKind::SafeOptimal | ControllerKind::MinNorm);
        if needs_barrier && self.barrier.is_none() {
            return Err(Error::Invalid(format!("`{}` controller needs a barrier", self.kind.as_str())));
        }
        if (self.kind == ControllerKind::Linear) != matches!(self.law, ControllerLaw::Gain(_)) {
            return Err(Error::Invalid("controller kind does not match its law".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# sgsa controller\n");
        let _ = writeln!(out, "kind = {}", self.kind.as_str());
        if let Some(b) = &self.barrier {
            let alphas = |a: &[ClassKappa]| a.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ");
            let vec = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
            match b {
                BarrierConfig::Circle { center, radius, alphas: a } => {
                    let _ = writeln!(out, "barrier.kind = circle");
                    let _ = writeln!(out, "barrier.center = {}", vec(center));
                    let _ = writeln!(out, "barrier.radius = {radius:?}");
                    let _ = writeln!(out, "barrier.alpha = {}", alphas(a));
                }
                BarrierConfig::HalfSpace { normal, offset, alphas: a } => {
                    let _ = writeln!(out, "barrier.kind = halfspace");
                    let _ = writeln!(out, "barrier.normal = {}", vec(normal));
                    let _ = writeln!(out, "barrier.offset = {offset:?}");
                    let _ = writeln!(out, "barrier.alpha = {}", alphas(a));
                }
            }
        }
        match &self.law {
            ControllerLaw::Value { dim, d_min, d_max, c } => {
                let _ = writeln!(out, "basis = {dim} {d_min} {d_max}");
                write_matrix(&mut out, "coefficients", &DMatrix::from_column_slice(c.len(), 1, c.as_slice()));
            }
            ControllerLaw::Gain(k) => write_matrix(&mut out, "gain", k),
        }
        out
    }

    /// Builds the runtime controller on `plant`.
    pub fn into_controller(&self, plant: &Plant) -> Result<Controller> {
        let value = || -> Result<ValueFn> {
            let ControllerLaw::Value { dim, d_min, d_max, c } = &self.law else {
                return Err(Error::Invalid("missing coefficients".into()));
            };
            if *dim != plant.model.state_dim() {
                return Err(Error::Dimension { expected: plant.model.state_dim(), got: *dim });
            }
            ValueFn::new(make_poly_basis(*dim, *d_min, *d_max)?, c.clone())
        };
        let barrier = || self.barrier.as_ref().expect("checked at parse time").build();
        Ok(match self.kind {
            ControllerKind::Unconstrained => Controller::Unconstrained { value: value()?, plant: plant.clone() },
            ControllerKind::SafeOptimal => {
                Controller::SafeOptimal { value: value()?, plant: plant.clone(), barrier: barrier()? }
            }
            ControllerKind::MinNorm => Controller::MinNormFiltered {
                nominal: Box::new(Controller::Unconstrained { value: value()?, plant: plant.clone() }),
                plant: plant.clone(),
                barrier: barrier()?,
            },
            ControllerKind::Linear => {
                let ControllerLaw::Gain(k) = &self.law else { unreachable!("checked at parse time") };
                if k.shape() != (plant.model.input_dim(), plant.model.state_dim()) {
                    return Err(Error::Invalid(format!("gain is {}x{}", k.nrows(), k.ncols())));
                }
                Controller::linear(k.clone())
            }
        })
    }
}

impl std::str::FromStr for ControllerFile {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let (matrices, lines) = read_blocks(text)?;
        let mut kind = None;
        let mut basis = None;
        let mut barrier_lines = String::new();
        for (line, content) in lines {
            let (key, value) =
                content.split_once('=').ok_or_else(|| parse_err(line, format!("expected `key = value`: `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "kind" => kind = Some(ControllerKind::parse(line, value)?),
                "basis" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    let [dim, lo, hi] = parts.as_slice() else {
                        return Err(parse_err(line, "basis needs `dim d_min d_max`"));
                    };
                    let bad = |_| parse_err(line, "bad basis descriptor");
                    basis = Some((
                        dim.parse::<usize>().map_err(bad)?,
                        lo.parse::<u32>().map_err(bad)?,
                        hi.parse::<u32>().map_err(bad)?,
                    ));
                }
                k if k.starts_with("barrier.") => {
                    let _ = writeln!(barrier_lines, "{key} = {value}");
                }
                other => return Err(parse_err(line, format!("unknown key `{other}`"))),
            }
        }
        let kind = kind.ok_or_else(|| parse_err(0, "missing `kind`"))?;
        let barrier = parse_barrier_block(&barrier_lines)?;
        let law = match (kind, matrices.as_slice()) {
            (ControllerKind::Linear, [(name, k)]) if name == "gain" => ControllerLaw::Gain(k.clone()),
            (ControllerKind::Linear, _) => return Err(parse_err(0, "linear controller needs one `gain` matrix")),
            (_, [(name, c)]) if name == "coefficients" && c.ncols() == 1 => {
                let (dim, d_min, d_max) = basis.ok_or_else(|| parse_err(0, "missing `basis`"))?;
                let expected = make_poly_basis(dim, d_min, d_max)?.len();
                if c.nrows() != expected {
                    return Err(parse_err(0, format!("basis has {expected} terms, file has {}", c.nrows())));
                }
                ControllerLaw::Value { dim, d_min, d_max, c: c.column(0).into_owned() }
            }
            _ => return Err(parse_err(0, "expected one `coefficients` column")),
        };
        let file = Self { kind, law, barrier };
        file.check()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::QuadraticCost;
    use crate::models::TwoStateExample;
    use std::sync::Arc;

    fn example_barrier() -> BarrierConfig {
        BarrierConfig::Circle {
            center: vec![0.75, -0.6],
            radius: 0.25,
            alphas: vec![ClassKappa::linear(20.0).unwrap()],
        }
    }

    fn value() -> ValueFn {
        let basis = make_poly_basis(2, 2, 3).unwrap();
        let c = DVector::from_fn(basis.len(), |i, _| (i as f64 + 1.0) / 3.0 - 0.1 * std::f64::consts::PI);
        ValueFn::new(basis, c).unwrap()
    }

    #[test]
    fn matrix_blocks_round_trip_bit_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0 / 3.0, -2.5e-17, 1e300, 0.0, -0.0, 7.0]);
        let mut text = String::new();
        write_matrix(&mut text, "a", &m);
        write_matrix(&mut text, "b", &DMatrix::from_element(1, 1, 2.0));
        text.push_str("other = 1\n");
        let (blocks, rest) = read_blocks(&text).unwrap();
        assert_eq!(blocks[0], ("a".to_string(), m));
        assert_eq!(blocks[1].1[(0, 0)], 2.0);
        assert_eq!(rest, vec![(6, "other = 1".to_string())]);
    }

    #[test]
    fn matrix_block_errors() {
        assert!(read_blocks("matrix a 2 2\n1 2\n").is_err());
        assert!(read_blocks("matrix a 1 2\n1 2 3\n").is_err());
        assert!(read_blocks("matrix a 1 2\n1 x\n").is_err());
        assert!(read_blocks("matrix a 1\n").is_err());
    }

    #[test]
    fn controller_files_round_trip() {
        let v = value();
        let barrier = example_barrier();
        for kind in [ControllerKind::Unconstrained, ControllerKind::SafeOptimal, ControllerKind::MinNorm] {
            let b = (kind != ControllerKind::Unconstrained).then_some(&barrier);
            let file = ControllerFile::from_value(kind, &v, b).unwrap();
            let back: ControllerFile = file.to_text().parse().unwrap();
            assert_eq!(back, file);
        }
        let lin = ControllerFile::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]));
        assert_eq!(lin.to_text().parse::<ControllerFile>().unwrap(), lin);
    }

    #[test]
    fn loaded_controller_matches_original() {
        let plant = Plant {
            model: Arc::new(TwoStateExample),
            cost: QuadraticCost::new(DMatrix::identity(2, 2) * 50.0, DMatrix::identity(2, 2) * 2.0).unwrap(),
        };
        let v = value();
        let barrier = example_barrier();
        let original = Controller::SafeOptimal { value: v.clone(), plant: plant.clone(), barrier: barrier.build().unwrap() };
        let file = ControllerFile::from_value(ControllerKind::SafeOptimal, &v, Some(&barrier)).unwrap();
        let loaded = file.to_text().parse::<ControllerFile>().unwrap().into_controller(&plant).unwrap();
        for x in [[1.0, -0.75], [0.2, 0.3], [-1.5, 1.9]] {
            let x = DVector::from_column_slice(&x);
            assert_eq!(loaded.eval(&x).unwrap(), original.eval(&x).unwrap());
        }
    }

    #[test]
    fn rejects_inconsistent_files() {
        let v = value();
        assert!(ControllerFile::from_value(ControllerKind::SafeOptimal, &v, None).is_err());
        let text = ControllerFile::from_value(ControllerKind::Unconstrained, &v, None).unwrap().to_text();
        assert!(text.replace("basis = 2 2 3", "basis = 2 2 4").parse::<ControllerFile>().is_err());
        assert!(text.replace("kind = unconstrained", "kind = bogus").parse::<ControllerFile>().is_err());
        assert!(text.replace("kind = unconstrained", "kind = safe-optimal").parse::<ControllerFile>().is_err());
        assert!(format!("{text}extra = 1\n").parse::<ControllerFile>().is_err());
        assert!(format!("{text}barrier.kind = circle\n").parse::<ControllerFile>().is_err());
    }
}
