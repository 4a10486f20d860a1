use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;

use sgsa_core::config::ProblemConfig;
use sgsa_core::control::Controller;
use sgsa_core::galerkin::SgsaResult;
use sgsa_core::models::StateVector;
use sgsa_core::plot::{phase_plane_svg, read_trajectory_csv};
use sgsa_core::safety::{psi_chain, BarrierSpec};
use sgsa_core::sim::{safety_report, simulate as run_sim, Trajectory};
use sgsa_core::synthesis::{synthesize, Problem, Synthesis};
use sgsa_core::textio::{ControllerFile, ControllerKind};
use sgsa_core::verify::{self, SuiteReport};

use crate::{Common, Failure};

type CmdResult = Result<(), Failure>;

fn load(common: &Common) -> Result<(ProblemConfig, Problem), Failure> {
    let path = common.config.as_ref().ok_or_else(|| Failure::config("--config is required"))?;
    let mut cfg = ProblemConfig::from_path(path)?;
    if let Some(order) = common.quad_order {
        cfg.sgsa.quad_order = order;
    }
    if let Some(mode) = common.activity_mode {
        cfg.sgsa.activity_mode = mode;
    }
    let problem = cfg.problem()?;
    Ok((cfg, problem))
}

fn write_out(common: &Common, name: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(&common.out_dir).map_err(|e| Failure::io(&common.out_dir, e))?;
    let path = common.out_dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Initial states must lie strictly inside the safe set.
fn check_initial(problem: &Problem, barrier: Option<&BarrierSpec>, x0: &StateVector) -> Result<(), Failure> {
    let n = problem.model.state_dim();
    if x0.len() != n {
        return Err(Failure::config(format!("initial state has {} entries, system has {n}", x0.len())));
    }
    if let Some(b) = barrier {
        let chain = psi_chain(b, &problem.model, x0)?;
        if !chain.in_interior() {
            return Err(Failure::precondition(format!(
                "initial state {:?} is not in the interior of the safe set (min psi = {:e})",
                x0.as_slice(),
                chain.min()
            )));
        }
    }
    Ok(())
}

fn parse_state(s: &str) -> Result<StateVector, Failure> {
    let values: Result<Vec<f64>, _> = s.split(',').map(|v| v.trim().parse::<f64>()).collect();
    values.map(DVector::from_vec).map_err(|_| Failure::config(format!("bad state `{s}`")))
}

fn trajectory(problem: &Problem, cfg: &ProblemConfig, ctl: &Controller, x0: &StateVector) -> Result<Trajectory, Failure> {
    let barrier = ctl.barrier().or(problem.barrier.as_ref());
    Ok(run_sim(&problem.plant(), ctl, barrier, Some(&problem.domain), x0, &cfg.sim)?)
}

fn csv_bytes(traj: &Trajectory) -> Vec<u8> {
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn fmt_result(label: &str, r: &SgsaResult) -> String {
    format!(
        "{label}: converged={} iterations={} final_step={:e} max_condition={:e}",
        r.converged,
        r.iterations,
        r.history.last().copied().unwrap_or(0.0),
        r.max_condition
    )
}

fn synth_files(cfg: &ProblemConfig, syn: &Synthesis) -> Result<Vec<(&'static str, String)>, Failure> {
    let barrier = cfg.barrier.as_ref();
    let mut files = vec![(
        "nominal.ctl",
        ControllerFile::from_value(ControllerKind::Unconstrained, &syn.nominal_value, None)?.to_text(),
    )];
    if let Some(safe) = &syn.safe_value {
        files.push(("safe.ctl", ControllerFile::from_value(ControllerKind::SafeOptimal, safe, barrier)?.to_text()));
        files.push((
            "min-norm.ctl",
            ControllerFile::from_value(ControllerKind::MinNorm, &syn.nominal_value, barrier)?.to_text(),
        ));
    }
    let mut report = String::new();
    let _ = writeln!(report, "{}", fmt_result("nominal", &syn.nominal));
    if let Some(safe) = &syn.safe {
        let _ = writeln!(report, "{}", fmt_result("safe", safe));
        let _ = writeln!(report, "\niteration step active_fraction");
        for (i, step) in safe.history.iter().enumerate() {
            let active = safe.active_fraction.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(report, "{:>9} {step:.6e} {active:.4}", i + 1);
        }
    }
    files.push(("report.txt", report));
    Ok(files)
}

pub fn synth(common: &Common) -> CmdResult {
    let (cfg, problem) = load(common)?;
    let syn = synthesize(&problem)?;
    for (name, text) in synth_files(&cfg, &syn)? {
        write_out(common, name, text.as_bytes())?;
    }
    println!("{}", fmt_result("nominal", &syn.nominal));
    if let Some(safe) = &syn.safe {
        println!("{}", fmt_result("safe", safe));
    }
    println!("basis functions: {}", syn.nominal.c.len());
    Ok(())
}

pub fn simulate(common: &Common, controller: &Path, x0: Option<&str>, output: &str) -> CmdResult {
    let (cfg, problem) = load(common)?;
    let text = fs::read_to_string(controller).map_err(|e| Failure::config(format!("{}: {e}", controller.display())))?;
    let file: ControllerFile = text.parse()?;
    let ctl = file.into_controller(&problem.plant())?;
    let x0 = match x0 {
        Some(s) => parse_state(s)?,
        None => cfg.initial_conditions.first().cloned().ok_or_else(|| Failure::config("no --x0 and no `ic` in config"))?,
    };
    check_initial(&problem, ctl.barrier().or(problem.barrier.as_ref()), &x0)?;
    let traj = trajectory(&problem, &cfg, &ctl, &x0)?;
    write_out(common, output, &csv_bytes(&traj))?;
    let min_h = safety_report(&traj).map(|r| r.min_h).unwrap_or(f64::NAN);
    let final_norm = traj.final_state().map(|x| x.norm()).unwrap_or(f64::NAN);
    println!("cost={:.6} min_h={min_h:.6e} final_norm={final_norm:.3e} samples={}", traj.total_cost(), traj.len());
    Ok(())
}

struct Row {
    x0: StateVector,
    costs: Vec<f64>,
    min_h: Vec<f64>,
    csvs: Vec<Vec<u8>>,
}

pub fn compare(common: &Common) -> CmdResult {
    let (cfg, problem) = load(common)?;
    if cfg.initial_conditions.is_empty() {
        return Err(Failure::config("compare needs at least one `ic`"));
    }
    for x0 in &cfg.initial_conditions {
        check_initial(&problem, problem.barrier.as_ref(), x0)?;
    }
    let syn = synthesize(&problem)?;
    let mut controllers = vec![("unconstrained", syn.nominal_controller())];
    controllers.extend(syn.safe_controller().map(|c| ("safe", c)));
    controllers.extend(syn.min_norm_controller().map(|c| ("min-norm", c)));

    let rows: Vec<Row> = cfg
        .initial_conditions
        .par_iter()
        .map(|x0| {
            let mut row = Row { x0: x0.clone(), costs: vec![], min_h: vec![], csvs: vec![] };
            for (_, ctl) in &controllers {
                let traj = trajectory(&problem, &cfg, ctl, x0)?;
                row.costs.push(traj.total_cost());
                row.min_h.push(safety_report(&traj).map(|r| r.min_h).unwrap_or(f64::NAN));
                row.csvs.push(csv_bytes(&traj));
            }
            Ok(row)
        })
        .collect::<Result<_, Failure>>()?;

    for (i, row) in rows.iter().enumerate() {
        for ((label, _), csv) in controllers.iter().zip(&row.csvs) {
            write_out(common, &format!("ic{}-{label}.csv", i + 1), csv)?;
        }
    }

    let labels: Vec<&str> = controllers.iter().map(|(l, _)| *l).collect();
    let mut csv = String::from("ic,x0");
    for l in &labels {
        let _ = write!(csv, ",cost_{l},min_h_{l}");
    }
    csv.push('\n');
    let mut table = format!("{:<4} {:<22}", "ic", "x0");
    for l in &labels {
        let _ = write!(table, " {:>14}", format!("cost {l}"));
    }
    for l in &labels {
        let _ = write!(table, " {:>16}", format!("min h {l}"));
    }
    table.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let x0: Vec<String> = row.x0.iter().map(|v| format!("{v}")).collect();
        let _ = write!(csv, "{},{}", i + 1, x0.join(" "));
        let _ = write!(table, "{:<4} {:<22}", i + 1, format!("({})", x0.join(", ")));
        for (c, h) in row.costs.iter().zip(&row.min_h) {
            let _ = write!(csv, ",{c},{h}");
        }
        for c in &row.costs {
            let _ = write!(table, " {c:>14.4}");
        }
        for h in &row.min_h {
            let _ = write!(table, " {h:>16.4e}");
        }
        csv.push('\n');
        table.push('\n');
    }
    write_out(common, "compare.csv", csv.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn suite_json(r: &SuiteReport) -> serde_json::Value {
    json!({
        "name": r.name,
        "samples": r.samples,
        "failures": r.failures,
        "worst": r.worst,
        "tolerance": r.tolerance,
        "passed": r.passed(),
    })
}

pub fn verify(common: &Common) -> CmdResult {
    let (cfg, problem) = load(common)?;
    let samples = cfg.verify_samples;
    let syn = synthesize(&problem)?;
    let reports = match (&syn.safe_value, &syn.barrier) {
        (Some(value), Some(barrier)) => {
            verify::run_all(value, barrier, &syn.plant, &problem.domain, samples, common.seed)?
        }
        // Without a barrier only the problem-independent suites apply.
        _ => vec![
            verify::rbar_suite(samples / 2, &mut verify::rng(common.seed + 1))?,
            verify::min_norm_suite(samples / 5, &mut verify::rng(common.seed + 4))?,
        ],
    };
    let passed = reports.iter().all(SuiteReport::passed);
    let summary = json!({
        "seed": common.seed,
        "samples": samples,
        "suites": reports.iter().map(suite_json).collect::<Vec<_>>(),
        "passed_suites": reports.iter().filter(|r| r.passed()).count(),
        "failed_suites": reports.iter().filter(|r| !r.passed()).count(),
        "passed": passed,
    });
    let text = serde_json::to_string_pretty(&summary).expect("json values serialize");
    write_out(common, "verify.json", format!("{text}\n").as_bytes())?;
    println!("{text}");
    if passed {
        Ok(())
    } else {
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        Err(Failure::invariant(format!("failed suites: {}", failed.join(", "))))
    }
}

pub fn plot(common: &Common, csvs: &[std::path::PathBuf], output: &str) -> CmdResult {
    let barrier = match &common.config {
        Some(_) => load(common)?.1.barrier,
        None => None,
    };
    let mut series = Vec::new();
    for path in csvs {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        series.push(read_trajectory_csv(&label, &text)?);
    }
    let svg = phase_plane_svg(&series, barrier.as_ref())?;
    write_out(common, output, svg.as_bytes())?;
    println!("{} series plotted", series.len());
    Ok(())
}

pub fn quadstudy(common: &Common, orders: &[usize], degrees: &[u32]) -> CmdResult {
    let (cfg, problem) = load(common)?;
    let x0 = cfg.initial_conditions.first().cloned().ok_or_else(|| Failure::config("quadstudy needs an `ic`"))?;
    check_initial(&problem, problem.barrier.as_ref(), &x0)?;
    let mut csv = String::from("d_max,order,cost,relative_change,status\n");
    println!("{:>5} {:>5} {:>14} {:>12}  status", "d_max", "order", "cost", "rel. change");
    for &d_max in degrees {
        let mut previous: Option<f64> = None;
        for &order in orders {
            let mut run_cfg = cfg.clone();
            run_cfg.d_max = d_max;
            run_cfg.sgsa.quad_order = order;
            let outcome = run_cfg.problem().and_then(|p| {
                let syn = synthesize(&p)?;
                let ctl = syn.safe_controller().unwrap_or_else(|| syn.nominal_controller());
                let barrier = ctl.barrier().cloned();
                run_sim(&p.plant(), &ctl, barrier.as_ref(), Some(&p.domain), &x0, &run_cfg.sim)
            });
            let (cost, status) = match outcome {
                Ok(traj) => (traj.total_cost(), "ok".to_string()),
                Err(e) => (f64::NAN, e.to_string()),
            };
            let change = match previous {
                Some(p) if cost.is_finite() => (cost - p).abs() / p.abs(),
                _ => f64::NAN,
            };
            if cost.is_finite() {
                previous = Some(cost);
            }
            let _ = writeln!(csv, "{d_max},{order},{cost},{change},\"{}\"", status.replace('"', "'"));
            println!("{d_max:>5} {order:>5} {cost:>14.4} {change:>12.4e}  {status}");
        }
    }
    write_out(common, "quadstudy.csv", csv.as_bytes())?;
    Ok(())
}
