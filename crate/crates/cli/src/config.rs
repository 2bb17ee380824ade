//! Plan configuration: the TOML schema, command-line overrides and
//! resolution into a runnable scenario.

use std::path::{Path, PathBuf};

use motionsketch::constraints::ConstraintSpec;
use motionsketch::ghf_solver::{geometric_schedule, FlowConfig, Scheme};
use motionsketch::obstacles::{BallObstacle, BarrierField};
use motionsketch::systems::{self, Scenario, Sketch, System, TwoLinkVariant};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::commands::Failure;

pub const DEFAULT_OUT: &str = "motionsketch-out";

/// Everything a plan run needs. Every field is optional in the file; the
/// report echoes the resolved values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Built-in scenario name. Exclusive with `system`.
    pub scenario: Option<String>,
    pub k: Option<f64>,
    /// Number of nodes `N` on the `t` grid.
    pub grid: Option<usize>,
    pub s_max: Option<f64>,
    pub step_safety: Option<f64>,
    /// `"rosenbrock"` (default) or `"explicit"`.
    pub scheme: Option<String>,
    /// Local error tolerance of the Rosenbrock scheme.
    pub tolerance: Option<f64>,
    pub snapshots: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    /// Only used by randomized test drivers; plans are deterministic.
    pub seed: Option<u64>,
    pub start: Option<Vec<f64>>,
    pub goal: Option<Vec<f64>>,
    pub system: Option<SystemConfig>,
    pub sketch: Option<SketchConfig>,
    pub obstacles: Option<Vec<ObstacleConfig>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `unicycle`, `car`, `two-link-vertical`, `two-link-arc` or `custom`.
    pub model: String,
    /// State dimension of a `custom` model.
    pub dim: Option<usize>,
    /// Constant constraint covectors of a `custom` model.
    pub covectors: Option<Vec<Vec<f64>>>,
    /// Constant actuation fields of a `custom` model.
    pub actuation: Option<Vec<Vec<f64>>>,
    /// Declared constraint rank.
    pub rank: Option<usize>,
    pub wheelbase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchConfig {
    Line,
    Sine { coord: usize, amplitude: f64 },
    LShape { corner: [f64; 2], radius: f64 },
    CircleArc { via: [f64; 2] },
    Waypoints { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Defaults to twice `radius`.
    pub detection: Option<f64>,
    /// State coordinates the ball lives in. Defaults to `[0, 1]`.
    pub coords: Option<Vec<usize>>,
}

/// Values given on the command line, applied over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub k: Option<f64>,
    pub grid: Option<usize>,
    pub s_max: Option<f64>,
    pub out: Option<PathBuf>,
}

impl PlanConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::invalid(format!("config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.scenario.is_some() {
            self.scenario = o.scenario.clone();
        }
        if o.k.is_some() {
            self.k = o.k;
        }
        if o.grid.is_some() {
            self.grid = o.grid;
        }
        if o.s_max.is_some() {
            self.s_max = o.s_max;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    /// Fills every numeric default so the echo is complete.
    pub fn with_defaults(&self) -> Self {
        let mut c = self.clone();
        let base = c.scenario.as_deref().and_then(|n| systems::scenario(n).ok());
        c.k.get_or_insert(base.as_ref().map_or(systems::DEFAULT_K, |s| s.k));
        c.grid.get_or_insert(base.as_ref().map_or(systems::DEFAULT_NODES, |s| s.n_nodes));
        c.s_max.get_or_insert(base.as_ref().map_or(systems::DEFAULT_S_MAX, |s| s.s_max));
        c.step_safety.get_or_insert(0.25);
        c.scheme.get_or_insert_with(|| "rosenbrock".into());
        if c.scheme.as_deref() == Some("rosenbrock") {
            c.tolerance.get_or_insert(match Scheme::rosenbrock() {
                Scheme::Rosenbrock { tolerance, .. } => tolerance,
                Scheme::Explicit => unreachable!(),
            });
        }
        if c.snapshots.is_none() {
            if let Some(s) = c.s_max {
                c.snapshots = Some(geometric_schedule(s));
            }
        }
        c.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT));
        c
    }

    /// Checks ranges and builds the scenario and the flow settings.
    pub fn resolve(&self) -> Result<Resolved, Failure> {
        let c = self.with_defaults();
        let (k, grid, s_max) = (c.k.unwrap(), c.grid.unwrap(), c.s_max.unwrap());
        if !(k > 1.0 && k.is_finite()) {
            return Err(Failure::invalid(format!("k must be a finite number > 1, got {k}")));
        }
        if grid < 3 {
            return Err(Failure::invalid(format!("grid must be >= 3, got {grid}")));
        }
        if !(s_max >= 0.0 && s_max.is_finite()) {
            return Err(Failure::invalid(format!("s_max must be finite and >= 0, got {s_max}")));
        }
        let mut scenario = match (&c.scenario, &c.system) {
            (Some(_), Some(_)) => return Err(Failure::invalid("give either `scenario` or `system`, not both")),
            (None, None) => return Err(Failure::invalid("no scenario or system given")),
            (Some(name), None) => systems::scenario(name).map_err(Failure::from)?,
            (None, Some(sys)) => {
                let system = build_system(sys)?;
                let n = system.n();
                let (Some(start), Some(goal)) = (&c.start, &c.goal) else {
                    return Err(Failure::invalid("an inline system needs `start` and `goal`"));
                };
                Scenario {
                    name: format!("custom-{}", sys.model),
                    system,
                    barrier: BarrierField::default(),
                    start: state(start, n, "start")?,
                    goal: state(goal, n, "goal")?,
                    sketch: Sketch::Line,
                    k,
                    n_nodes: grid,
                    s_max,
                }
            }
        };
        let n = scenario.n();
        if c.scenario.is_some() {
            if let Some(s) = &c.start {
                scenario.start = state(s, n, "start")?;
            }
            if let Some(g) = &c.goal {
                scenario.goal = state(g, n, "goal")?;
            }
        }
        if let Some(obs) = &c.obstacles {
            scenario.barrier = BarrierField::new(obs.iter().map(obstacle).collect::<Result<_, _>>()?, vec![]);
        }
        scenario.barrier.check_dim(n).map_err(Failure::from)?;
        if let Some(sk) = &c.sketch {
            scenario.sketch = sketch(sk);
        }
        scenario.k = k;
        scenario.n_nodes = grid;
        scenario.s_max = s_max;

        let step_safety = c.step_safety.unwrap();
        let scheme = match c.scheme.as_deref() {
            Some("explicit") => Scheme::Explicit,
            Some("rosenbrock") => match Scheme::rosenbrock() {
                Scheme::Rosenbrock { max_step, max_metric_growth, .. } => {
                    Scheme::Rosenbrock { tolerance: c.tolerance.unwrap(), max_step, max_metric_growth }
                }
                Scheme::Explicit => unreachable!(),
            },
            other => return Err(Failure::invalid(format!("unknown scheme {other:?}"))),
        };
        let mut flow = FlowConfig::new(s_max).with_scheme(scheme).with_snapshots(c.snapshots.clone().unwrap());
        flow.step_safety = step_safety;
        flow.validate().map_err(Failure::from)?;
        Ok(Resolved { echo: c.clone(), scenario, flow, out: c.out.clone().unwrap() })
    }
}

/// A checked configuration.
pub struct Resolved {
    pub echo: PlanConfig,
    pub scenario: Scenario,
    pub flow: FlowConfig,
    pub out: PathBuf,
}

fn state(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>, Failure> {
    if v.len() != n {
        return Err(Failure::invalid(format!("`{what}` has {} entries, the state has {n}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

fn obstacle(o: &ObstacleConfig) -> Result<BallObstacle, Failure> {
    let coords = o.coords.clone().unwrap_or_else(|| vec![0, 1]);
    BallObstacle::with_detection(o.center.clone(), o.radius, o.detection.unwrap_or(2.0 * o.radius), coords)
        .map_err(Failure::from)
}

fn sketch(s: &SketchConfig) -> Sketch {
    match s {
        SketchConfig::Line => Sketch::Line,
        SketchConfig::Sine { coord, amplitude } => Sketch::Sine { coord: *coord, amplitude: *amplitude },
        SketchConfig::LShape { corner, radius } => Sketch::LShape { corner: *corner, radius: *radius },
        SketchConfig::CircleArc { via } => Sketch::CircleArc { via: *via },
        SketchConfig::Waypoints { points } => {
            Sketch::Waypoints(points.iter().map(|p| DVector::from_column_slice(p)).collect())
        }
    }
}

fn constant_fields(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Vec<DVector<f64>>, Failure> {
    rows.iter()
        .map(|r| {
            if r.len() != n {
                return Err(Failure::invalid(format!("{what} field has {} entries, the state has {n}", r.len())));
            }
            Ok(DVector::from_column_slice(r))
        })
        .collect()
}

fn build_system(c: &SystemConfig) -> Result<System, Failure> {
    let mut system = match c.model.as_str() {
        "unicycle" => systems::unicycle(),
        "car" => systems::car(c.wheelbase.unwrap_or(systems::CAR_WHEELBASE)),
        "two-link-vertical" => systems::two_link(TwoLinkVariant::VerticalLine),
        "two-link-arc" => systems::two_link(TwoLinkVariant::CircularArc),
        "custom" => {
            let Some(n) = c.dim.filter(|&n| n > 0) else {
                return Err(Failure::invalid("a custom system needs `dim` > 0"));
            };
            let covectors = constant_fields(c.covectors.as_deref().unwrap_or(&[]), n, "covector")?;
            let actuation = constant_fields(c.actuation.as_deref().unwrap_or(&[]), n, "actuation")?;
            let mut spec = if covectors.is_empty() {
                ConstraintSpec::actuation_first(n, vec![])
            } else {
                ConstraintSpec::constraint_first(n)
            };
            for v in covectors {
                spec = spec.with_covector(move |_| v.clone());
            }
            if actuation.is_empty() && c.covectors.as_deref().unwrap_or(&[]).is_empty() {
                // Unconstrained: every coordinate is an input and H = I.
                for i in 0..n {
                    spec = spec.with_actuation(move |_| DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 }));
                }
            }
            for v in actuation {
                spec = spec.with_actuation(move |_| v.clone());
            }
            System::new("custom", spec)
        }
        other => return Err(Failure::invalid(format!("unknown system model `{other}`"))),
    };
    if let Some(r) = c.rank {
        system.spec = system.spec.clone().with_rank(r);
    }
    system.spec.validate().map_err(Failure::from)?;
    Ok(system)
}
