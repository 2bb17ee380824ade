//! The `plan`, `validate` and `sweep` commands and their exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use motionsketch::constraints::{constraint_residual, orthonormal_frame, DEFAULT_RANK_TOL};
use motionsketch::control::{extract_controls, input_fields, rollout};
use motionsketch::ghf_solver::{diagnose, flow};
use motionsketch::obstacles::Clearance;
use motionsketch::{Curve, Error};
use serde::Serialize;

use crate::config::{Overrides, PlanConfig, Resolved};
use crate::output::{controls_csv, curve_csv, in_dir, relative, snapshot_name, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CLEARANCE: i32 = 3;
pub const EXIT_FLOW: i32 = 4;
pub const EXIT_RANK: i32 = 5;

/// Boundary states must satisfy holonomic constraints to this tolerance.
const BOUNDARY_TOL: f64 = 1e-9;

/// A failed run, with its exit code and the record written to the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

impl Failure {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into(), node: None, constraint: None }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(EXIT_INVALID, "invalid-config", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_INVALID, "io", format!("{}: {e}", path.display()))
    }

    /// Errors raised while flowing: anything but a rank drop is a flow
    /// failure.
    fn flow(e: Error) -> Self {
        match e {
            Error::RankDrop { .. } => e.into(),
            Error::NonFinite { node, .. } => {
                Self { node: Some(node), ..Self::new(EXIT_FLOW, "flow-failure", e.to_string()) }
            }
            _ => Self::new(EXIT_FLOW, "flow-failure", e.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::RankDrop { .. } => Self::new(EXIT_RANK, "rank-drop", e.to_string()),
            Error::InsideObstacle { .. } => Self::new(EXIT_CLEARANCE, "clearance", e.to_string()),
            Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::EndpointMismatch { .. } => {
                Self::invalid(e.to_string())
            }
            _ => Self::new(EXIT_FLOW, "flow-failure", e.to_string()),
        }
    }
}

/// Loads the config file (if any) and applies command-line overrides.
pub fn load(config: Option<&Path>, o: &Overrides) -> Result<PlanConfig, Failure> {
    let mut c = match config {
        Some(p) => PlanConfig::load(p)?,
        None => PlanConfig::default(),
    };
    c.apply(o);
    Ok(c)
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    status: &'static str,
    error: &'a Failure,
}

/// Writes `report.toml` with the failure record into `out` and returns its
/// path, or `None` if even that fails.
pub fn write_failure(out: &Path, f: &Failure) -> Option<PathBuf> {
    let path = in_dir(out, "report.toml");
    let text = toml::to_string(&ErrorReport { status: "error", error: f }).ok()?;
    write_atomic(&path, text.as_bytes()).ok()?;
    Some(path)
}

pub fn failure_record(f: &Failure) -> String {
    toml::to_string(&ErrorReport { status: "error", error: f }).unwrap_or_else(|_| format!("code = {}\n", f.code))
}

fn clearance_failure(c: Clearance) -> Result<(), Failure> {
    match c {
        Clearance::Clear => Ok(()),
        Clearance::Violated { node, violation } => Err(Failure {
            node: Some(node),
            ..Failure::new(EXIT_CLEARANCE, "clearance", format!("sketch node {node} is inside {violation}"))
        }),
    }
}

fn boundary_check(r: &Resolved) -> Result<(), Failure> {
    match r.scenario.boundary_violation(BOUNDARY_TOL) {
        None => Ok(()),
        Some((name, value)) => Err(Failure {
            constraint: Some(name.clone()),
            ..Failure::invalid(format!("boundary state violates holonomic constraint {name} (value {value:e})"))
        }),
    }
}

/// Max over nodes of `|q(x)|` for every holonomic constraint.
fn holonomic_table(r: &Resolved, c: &Curve) -> BTreeMap<String, f64> {
    r.scenario
        .system
        .spec
        .holonomic
        .iter()
        .map(|q| {
            let worst = (0..c.n_nodes()).map(|a| (q.value)(&c.node(a).into_owned()).abs()).fold(0.0, f64::max);
            (q.name.clone(), worst)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct PlanResult {
    endpoint_error: f64,
    sup_error: f64,
    energy: f64,
    sketch_length: f64,
    final_length: f64,
    sketch_constraint_residual: f64,
    final_constraint_residual: f64,
    steps: usize,
    rejected_steps: usize,
    max_length_increase: f64,
}

#[derive(Debug, Serialize)]
struct Files {
    sketch: String,
    x_sol: String,
    controls: String,
    rollout: String,
    timings: String,
    snapshots: Vec<String>,
}

#[derive(Debug, Serialize)]
struct DiagnosticEntry {
    s: f64,
    length: f64,
    constraint_residual: f64,
    max_geodesic_residual: f64,
}

#[derive(Debug, Serialize)]
struct PlanReport<'a> {
    status: &'static str,
    scenario: &'a str,
    config: &'a PlanConfig,
    result: PlanResult,
    files: Files,
    /// Worst `|q|` along the final curve per holonomic constraint.
    holonomic: BTreeMap<String, f64>,
    diagnostics: Vec<DiagnosticEntry>,
}

#[derive(Debug, Serialize)]
struct Timings {
    metric_seconds: f64,
    flow_seconds: f64,
    controls_seconds: f64,
    rollout_seconds: f64,
}

/// What a successful plan leaves behind.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub report: PathBuf,
    pub final_curve: Curve,
    pub endpoint_error: f64,
    pub energy: f64,
    pub constraint_residual: f64,
}

pub fn plan(r: &Resolved) -> Result<PlanOutcome, Failure> {
    let s = &r.scenario;
    info!("plan `{}`: n = {}, N = {}, k = {}, s_max = {}", s.name, s.n(), s.n_nodes, s.k, s.s_max);
    boundary_check(r)?;
    let sketch = s.sketch_curve()?;
    clearance_failure(s.barrier.sketch_clearance(&sketch))?;

    let t = Instant::now();
    let metric = s.metric()?;
    let metric_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let sol = flow(&sketch, &metric, &r.flow).map_err(Failure::flow)?;
    let flow_seconds = t.elapsed().as_secs_f64();
    info!("flow: {} steps ({} rejected) in {flow_seconds:.3} s", sol.steps(), sol.rejected);
    let rows = diagnose(&sol, &s.system.spec, &metric).map_err(Failure::flow)?;
    let x_sol = sol.final_curve();

    let t = Instant::now();
    let u = extract_controls(x_sol, &s.system.spec)?;
    let controls_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let roll = rollout(&s.system.spec, &u, x_sol).map_err(Failure::flow)?;
    let rollout_seconds = t.elapsed().as_secs_f64();
    info!("rollout: endpoint error {:e}, energy {:e}", roll.endpoint_error, roll.energy);
    if roll.endpoint_error > 0.1 {
        warn!("rollout misses the goal by {:e}", roll.endpoint_error);
    }

    let out = &r.out;
    let mut snapshots = Vec::new();
    for snap in &sol.snapshots {
        let p = out.join("snapshots").join(snapshot_name(snap.s));
        write_atomic(&p, curve_csv(&snap.curve).as_bytes())?;
        snapshots.push(relative(out, &p));
    }
    let files = [
        ("sketch.csv", curve_csv(&sketch)),
        ("x_sol.csv", curve_csv(x_sol)),
        ("controls.csv", controls_csv(&u)),
        ("rollout.csv", curve_csv(&roll.states)),
    ];
    for (name, text) in &files {
        write_atomic(&in_dir(out, name), text.as_bytes())?;
    }
    let timings = Timings { metric_seconds, flow_seconds, controls_seconds, rollout_seconds };
    write_atomic(&in_dir(out, "timings.toml"), toml_text(&timings)?.as_bytes())?;

    let final_residual = constraint_residual(x_sol, &s.system.spec)?;
    let report = PlanReport {
        status: "ok",
        scenario: &s.name,
        config: &r.echo,
        result: PlanResult {
            endpoint_error: roll.endpoint_error,
            sup_error: roll.sup_error,
            energy: roll.energy,
            sketch_length: rows.first().map_or(f64::NAN, |d| d.length),
            final_length: rows.last().map_or(f64::NAN, |d| d.length),
            sketch_constraint_residual: constraint_residual(&sketch, &s.system.spec)?,
            final_constraint_residual: final_residual,
            steps: sol.steps(),
            rejected_steps: sol.rejected,
            max_length_increase: sol.max_length_increase,
        },
        files: Files {
            sketch: "sketch.csv".into(),
            x_sol: "x_sol.csv".into(),
            controls: "controls.csv".into(),
            rollout: "rollout.csv".into(),
            timings: "timings.toml".into(),
            snapshots,
        },
        holonomic: holonomic_table(r, x_sol),
        diagnostics: rows
            .iter()
            .map(|d| DiagnosticEntry {
                s: d.s,
                length: d.length,
                constraint_residual: d.constraint_residual,
                max_geodesic_residual: d.max_geodesic_residual,
            })
            .collect(),
    };
    let path = in_dir(out, "report.toml");
    write_atomic(&path, toml_text(&report)?.as_bytes())?;
    Ok(PlanOutcome {
        report: path,
        endpoint_error: roll.endpoint_error,
        energy: roll.energy,
        constraint_residual: final_residual,
        final_curve: sol.into_final(),
    })
}

fn toml_text<T: Serialize>(v: &T) -> Result<String, Failure> {
    toml::to_string(v).map_err(|e| Failure::invalid(format!("cannot serialize report: {e}")))
}

#[derive(Debug, Serialize)]
struct ValidationReport<'a> {
    status: &'static str,
    scenario: &'a str,
    config: &'a PlanConfig,
    checks: Vec<&'static str>,
}

/// Dry run: dimensions, boundary constraints, frame rank at the boundary,
/// sketch clearance and positive definiteness of `G` along the sketch.
pub fn validate(r: &Resolved) -> Result<PathBuf, Failure> {
    let s = &r.scenario;
    let mut checks = Vec::new();
    let sketch = s.sketch_curve()?;
    checks.push("dimensions");
    boundary_check(r)?;
    checks.push("boundary-constraints");
    for x in [&s.start, &s.goal] {
        orthonormal_frame(&s.system.spec, x, DEFAULT_RANK_TOL)?;
        input_fields(&s.system.spec, x)?;
    }
    checks.push("boundary-rank");
    clearance_failure(s.barrier.sketch_clearance(&sketch))?;
    checks.push("sketch-clearance");
    let metric = s.metric()?;
    for a in 0..sketch.n_nodes() {
        let x = sketch.node(a).into_owned();
        metric.metric(&x).and_then(|g| g.factor().map(|_| ())).map_err(|e| match e {
            Error::RankDrop { .. } => Failure::from(e),
            _ => Failure { node: Some(a), ..Failure::flow(e) },
        })?;
    }
    checks.push("metric-spd");
    info!("`{}` passes {} checks", s.name, checks.len());
    let path = in_dir(&r.out, "validation.toml");
    let report = ValidationReport { status: "ok", scenario: &s.name, config: &r.echo, checks };
    write_atomic(&path, toml_text(&report)?.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    K,
    Grid,
    Smax,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Grid => "grid",
            SweepParam::Smax => "smax",
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    value: f64,
    exit_code: i32,
    report: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoint_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    constraint_residual: Option<f64>,
    /// Grid sweeps: sup-norm difference to the previous run's final curve
    /// on the nodes both grids share.
    #[serde(skip_serializing_if = "Option::is_none")]
    sup_diff_prev: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    status: &'static str,
    parameter: &'static str,
    runs: Vec<SweepRow>,
}

/// Sup-norm difference between two curves on the nodes of the coarser one,
/// when one grid refines the other.
pub fn shared_node_difference(a: &Curve, b: &Curve) -> Option<f64> {
    let (coarse, fine) = if a.n_nodes() <= b.n_nodes() { (a, b) } else { (b, a) };
    let (nc, nf) = (coarse.n_nodes() - 1, fine.n_nodes() - 1);
    if coarse.dim() != fine.dim() || nf % nc != 0 {
        return None;
    }
    let stride = nf / nc;
    Some((0..=nc).map(|i| (coarse.node(i) - fine.node(i * stride)).amax()).fold(0.0, f64::max))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.16e}"))
}

/// Runs `plan` once per value, each into `<out>/<param>=<value>/`, and
/// writes `sweep.csv` and `sweep.toml`. Returns the report path and the
/// exit code: 0 if every run succeeded, else the first failing code.
pub fn sweep(base: &PlanConfig, param: SweepParam, values: &[f64]) -> Result<(PathBuf, i32), Failure> {
    if values.is_empty() {
        return Err(Failure::invalid("sweep needs at least one value"));
    }
    let root = base.with_defaults().out.unwrap();
    let mut rows = Vec::new();
    let mut prev: Option<Curve> = None;
    let mut code = EXIT_OK;
    for &v in values {
        let mut c = base.clone();
        let dir = root.join(format!("{}={v}", param.name()));
        let mut o = Overrides { out: Some(dir.clone()), ..Default::default() };
        match param {
            SweepParam::K => o.k = Some(v),
            SweepParam::Smax => o.s_max = Some(v),
            SweepParam::Grid => {
                if !(v.fract() == 0.0 && v >= 0.0) {
                    return Err(Failure::invalid(format!("grid values must be whole numbers, got {v}")));
                }
                o.grid = Some(v as usize);
            }
        }
        c.apply(&o);
        c.snapshots = base.snapshots.clone();
        let result = c.resolve().and_then(|r| plan(&r));
        let row = match result {
            Ok(outcome) => {
                let diff = match (param, &prev) {
                    (SweepParam::Grid, Some(p)) => shared_node_difference(p, &outcome.final_curve),
                    _ => None,
                };
                let row = SweepRow {
                    value: v,
                    exit_code: EXIT_OK,
                    report: relative(&root, &outcome.report),
                    endpoint_error: Some(outcome.endpoint_error),
                    energy: Some(outcome.energy),
                    constraint_residual: Some(outcome.constraint_residual),
                    sup_diff_prev: diff,
                };
                prev = Some(outcome.final_curve);
                row
            }
            Err(f) => {
                warn!("{}={v} failed: {}", param.name(), f.message);
                if code == EXIT_OK {
                    code = f.code;
                }
                let report = write_failure(&dir, &f).map(|p| relative(&root, &p)).unwrap_or_default();
                prev = None;
                SweepRow {
                    value: v,
                    exit_code: f.code,
                    report,
                    endpoint_error: None,
                    energy: None,
                    constraint_residual: None,
                    sup_diff_prev: None,
                }
            }
        };
        rows.push(row);
    }
    let mut csv = String::from("value,exit_code,endpoint_error,energy,constraint_residual,sup_diff_prev\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value,
            r.exit_code,
            fmt_opt(r.endpoint_error),
            fmt_opt(r.energy),
            fmt_opt(r.constraint_residual),
            fmt_opt(r.sup_diff_prev)
        ));
    }
    write_atomic(&root.join("sweep.csv"), csv.as_bytes())?;
    let status = if code == EXIT_OK { "ok" } else { "error" };
    let path = root.join("sweep.toml");
    write_atomic(&path, toml_text(&SweepReport { status, parameter: param.name(), runs: rows })?.as_bytes())?;
    Ok((path, code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn error_codes() {
        assert_eq!(Failure::from(Error::Invalid("x".into())).code, EXIT_INVALID);
        assert_eq!(Failure::from(Error::EndpointMismatch { which: "end" }).code, EXIT_INVALID);
        assert_eq!(Failure::from(Error::RankDrop { expected: 2, found: 1 }).code, EXIT_RANK);
        assert_eq!(Failure::flow(Error::StepCollapse { s: 0.1, step: 1e-13 }).code, EXIT_FLOW);
        assert_eq!(Failure::flow(Error::NonFinite { node: 3, s: 0.1 }).node, Some(3));
        assert_eq!(Failure::flow(Error::RankDrop { expected: 2, found: 1 }).code, EXIT_RANK);
    }

    #[test]
    fn shared_nodes() {
        let a = Curve::line(&dvector![0.0], &dvector![1.0], 3).unwrap();
        let mut b = Curve::line(&dvector![0.0], &dvector![1.0], 5).unwrap();
        assert_eq!(shared_node_difference(&a, &b), Some(0.0));
        b = Curve::from_fn(5, 1, |t| dvector![t + 0.25 * (t * 4.0 - 1.0).abs().min(0.5)]).unwrap();
        assert!(shared_node_difference(&a, &b).unwrap() > 0.0);
        let c = Curve::line(&dvector![0.0], &dvector![1.0], 4).unwrap();
        assert_eq!(shared_node_difference(&a, &c), None);
    }

    #[test]
    fn failure_record_is_toml() {
        let f = Failure { node: Some(7), ..Failure::new(EXIT_CLEARANCE, "clearance", "inside") };
        let v: toml::Value = toml::from_str(&failure_record(&f)).unwrap();
        assert_eq!(v["error"]["node"].as_integer(), Some(7));
        assert_eq!(v["status"].as_str(), Some("error"));
    }
}
