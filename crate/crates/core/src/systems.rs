//! Built-in vehicle and manipulator models, their scenarios, multi-vehicle
//! composition and sketch generators.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::sync::Arc;

use nalgebra::{dvector, DVector};

use crate::constraints::{ConstraintMetric, ConstraintSpec, DerivativeHook, FrameMode, PenaltyWeights, VectorField};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::geometry::{compose_metric, BlockMetric, MetricDerivatives, MetricField};
use crate::obstacles::{BallObstacle, BarrierField, CollisionPair};

/// Names accepted by [`scenario`].
pub const SCENARIOS: [&str; 9] = [
    "unicycle-two-obstacles",
    "car-180",
    "car-180-curbs",
    "car-corner-wide",
    "car-corner-narrow",
    "twolink-vertical",
    "twolink-arc",
    "two-unicycle-swap",
    "two-unicycle-cross",
];

pub const DEFAULT_K: f64 = 100.0;
pub const DEFAULT_NODES: usize = 101;
pub const DEFAULT_S_MAX: f64 = 4.0;

/// Car wheelbase.
pub const CAR_WHEELBASE: f64 = 1.0;
/// Largest wheel angle the steering-limit obstacles allow.
pub const CAR_STEERING_LIMIT: f64 = 1.0;
pub const CORNER_WIDE: f64 = 4.0;
pub const CORNER_NARROW: f64 = 2.0;
pub const CURB_STREET_WIDTH: f64 = 3.0;
const CURB_BALL_RADIUS: f64 = 0.25;

pub const COLLISION_RADIUS: f64 = 0.2;
pub const COLLISION_DETECTION: f64 = 0.4;

pub const TWO_LINK_L1: f64 = 1.0;
pub const TWO_LINK_L2: f64 = 1.0;

/// A control system: its constraint description and, for composites, the
/// member systems whose metrics form the diagonal blocks.
#[derive(Clone)]
pub struct System {
    pub name: String,
    pub spec: ConstraintSpec,
    derivatives: Option<DerivativeHook>,
    members: Vec<System>,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("n", &self.spec.n)
            .field("members", &self.members.len())
            .finish()
    }
}

impl System {
    pub fn new(name: impl Into<String>, spec: ConstraintSpec) -> Self {
        Self { name: name.into(), spec, derivatives: None, members: Vec::new() }
    }

    /// Analytic `∂H` used instead of finite differences.
    pub fn with_derivatives(mut self, hook: DerivativeHook) -> Self {
        self.derivatives = Some(hook);
        self
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn members(&self) -> &[System] {
        &self.members
    }

    /// `H(x)` at penalty `k`. Composite systems get a block-diagonal field.
    pub fn metric_core(&self, k: f64) -> Result<Box<dyn MetricField>> {
        if !self.members.is_empty() {
            let blocks = self.members.iter().map(|m| m.metric_core(k)).collect::<Result<Vec<_>>>()?;
            return Ok(Box::new(BlockMetric::new(blocks)));
        }
        let mut m = ConstraintMetric::new(self.spec.clone(), PenaltyWeights::new(k)?)?;
        if let Some(hook) = &self.derivatives {
            m = m.with_derivatives(hook.clone());
        }
        Ok(Box::new(m))
    }

    /// `G = b·H`.
    pub fn metric(&self, k: f64, barrier: &BarrierField) -> Result<Box<dyn MetricField>> {
        barrier.check_dim(self.n())?;
        let core = self.metric_core(k)?;
        if barrier.is_empty() {
            return Ok(core);
        }
        Ok(Box::new(compose_metric(core, barrier.clone())))
    }
}

pub fn unicycle() -> System {
    let spec = ConstraintSpec::constraint_first(3)
        .with_covector(|x| dvector![-x[2].sin(), x[2].cos(), 0.0])
        .with_actuation(|x| dvector![x[2].cos(), x[2].sin(), 0.0])
        .with_actuation(|_| dvector![0.0, 0.0, 1.0]);
    System::new("unicycle", spec).with_derivatives(Arc::new(unicycle_derivatives))
}

/// `∂H/∂θ = (k − 1)(n' nᵀ + n n'ᵀ)` with `n = (−sin θ, cos θ, 0)`.
pub fn unicycle_derivatives(x: &DVector<f64>, k: f64) -> MetricDerivatives {
    let (s, c) = x[2].sin_cos();
    let n = dvector![-s, c, 0.0];
    let dn = dvector![-c, -s, 0.0];
    let mut d = MetricDerivatives::zeros(3);
    d.slices[2] = (&dn * n.transpose() + &n * dn.transpose()) * (k - 1.0);
    d
}

/// Kinematic car on `(x, y, θ, φ)` with wheel angle `θ` and heading `φ`.
pub fn car(wheelbase: f64) -> System {
    let spec = ConstraintSpec::actuation_first(4, vec![])
        .with_actuation(move |x| dvector![x[3].cos(), x[3].sin(), 0.0, x[2].sin() / wheelbase])
        .with_actuation(|_| dvector![0.0, 0.0, 1.0, 0.0]);
    System::new("car", spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoLinkVariant {
    VerticalLine,
    CircularArc,
}

/// Boundary states of the two-link scenarios.
pub fn two_link_boundary() -> (DVector<f64>, DVector<f64>) {
    (
        dvector![FRAC_1_SQRT_2, 1.0 - FRAC_1_SQRT_2, FRAC_PI_2, -FRAC_PI_4],
        dvector![FRAC_1_SQRT_2, 1.0 + FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4],
    )
}

/// Circle through the two-link tip boundary points with its centre on their
/// bisector, at the point nearest the origin.
pub fn two_link_circle() -> ([f64; 2], f64) {
    let (xi, xf) = two_link_boundary();
    let mid = [(xi[0] + xf[0]) / 2.0, (xi[1] + xf[1]) / 2.0];
    let dir = [xf[0] - xi[0], xf[1] - xi[1]];
    let norm = dir[0].hypot(dir[1]);
    let normal = [-dir[1] / norm, dir[0] / norm];
    let along = -(mid[0] * normal[0] + mid[1] * normal[1]);
    let center = [mid[0] + along * normal[0], mid[1] + along * normal[1]];
    let radius = (xi[0] - center[0]).hypot(xi[1] - center[1]);
    (center, radius)
}

/// Planar two-link arm on `(x, y, θ₁, θ₂)` with the tip held to a line or a
/// circle. The inputs are the joint rates.
pub fn two_link(variant: TwoLinkVariant) -> System {
    let (l1, l2) = (TWO_LINK_L1, TWO_LINK_L2);
    let mut spec = ConstraintSpec::constraint_first(4)
        .with_holonomic(
            "q1",
            move |x| l1 * x[2].cos() + l2 * x[3].cos() - x[0],
            move |x| dvector![-1.0, 0.0, -l1 * x[2].sin(), -l2 * x[3].sin()],
        )
        .with_holonomic(
            "q2",
            move |x| l1 * x[2].sin() + l2 * x[3].sin() - x[1],
            move |x| dvector![0.0, -1.0, l1 * x[2].cos(), l2 * x[3].cos()],
        );
    spec = match variant {
        TwoLinkVariant::VerticalLine => {
            let x0 = two_link_boundary().0[0];
            spec.with_holonomic("q3", move |x| x[0] - x0, |_| dvector![1.0, 0.0, 0.0, 0.0])
        }
        TwoLinkVariant::CircularArc => {
            let ([cx, cy], r) = two_link_circle();
            spec.with_holonomic(
                "q4",
                move |x| (x[0] - cx).powi(2) + (x[1] - cy).powi(2) - r * r,
                move |x| dvector![2.0 * (x[0] - cx), 2.0 * (x[1] - cy), 0.0, 0.0],
            )
        }
    };
    let spec = spec
        .with_actuation(move |x| dvector![-l1 * x[2].sin(), l1 * x[2].cos(), 1.0, 0.0])
        .with_actuation(move |x| dvector![-l2 * x[3].sin(), l2 * x[3].cos(), 0.0, 1.0]);
    System::new("two-link", spec)
}

/// Composite of `members` acting on stacked states. Every constraint and
/// actuation field is extended by zero outside its own block.
pub fn compose_systems(members: Vec<System>) -> Result<System> {
    let Some(first) = members.first() else {
        return Err(Error::Invalid("a composite system needs at least one member".into()));
    };
    let mode = first.spec.mode;
    if members.iter().any(|m| m.spec.mode != mode) {
        return Err(Error::Invalid("composite members must share a frame mode".into()));
    }
    for m in &members {
        m.spec.validate()?;
    }
    let n: usize = members.iter().map(|m| m.n()).sum();
    let mut spec = match mode {
        FrameMode::ConstraintFirst => ConstraintSpec::constraint_first(n),
        FrameMode::ActuationFirst => ConstraintSpec::actuation_first(n, vec![]),
    };
    let mut offset = 0;
    for m in &members {
        let (o, nm) = (offset, m.n());
        for q in &m.spec.holonomic {
            let (value, gradient) = (q.value.clone(), q.gradient.clone());
            spec = spec.with_holonomic(
                format!("{}[{}].{}", m.name, o, q.name),
                move |x| value(&x.rows(o, nm).into_owned()),
                embed(gradient, o, nm, n),
            );
        }
        for f in &m.spec.nonholonomic {
            spec = spec.with_covector(embed(f.clone(), o, nm, n));
        }
        for f in &m.spec.actuation {
            spec = spec.with_actuation(embed(f.clone(), o, nm, n));
        }
        offset += nm;
    }
    if members.iter().any(|m| m.spec.declared_rank.is_some()) {
        spec = spec.with_rank(members.iter().map(|m| m.spec.expected_rank()).sum());
    }
    let name = members.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+");
    Ok(System { name, spec, derivatives: None, members })
}

fn embed(f: VectorField, offset: usize, m: usize, n: usize) -> impl Fn(&DVector<f64>) -> DVector<f64> {
    move |x| {
        let mut out = DVector::zeros(n);
        out.rows_mut(offset, m).copy_from(&f(&x.rows(offset, m).into_owned()));
        out
    }
}

/// Initial curve shapes. Planar shapes act on state coordinates `(0, 1)` and
/// interpolate every other coordinate linearly in `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Sketch {
    Line,
    /// Straight line plus `amplitude · sin(πt)` in coordinate `coord`.
    Sine {
        coord: usize,
        amplitude: f64,
    },
    /// Two straight legs meeting at `corner`, rounded within `radius` of it.
    LShape {
        corner: [f64; 2],
        radius: f64,
    },
    /// Circular arc through the planar endpoints and `via`.
    CircleArc {
        via: [f64; 2],
    },
    /// Piecewise linear through full states, which must start and end at the
    /// boundary states.
    Waypoints(Vec<DVector<f64>>),
    /// One sketch per block of a stacked state, with the block dimensions.
    Stacked(Vec<(usize, Sketch)>),
}

const ENDPOINT_TOL: f64 = 1e-12;

/// Samples `kind` on `n_nodes` nodes between `start` and `goal`.
pub fn sketch(kind: &Sketch, start: &DVector<f64>, goal: &DVector<f64>, n_nodes: usize) -> Result<Curve> {
    if start.len() != goal.len() {
        return Err(Error::DimensionMismatch { expected: start.len(), found: goal.len() });
    }
    if n_nodes < 2 {
        return Err(Error::Invalid(format!("a sketch needs at least 2 nodes, got {n_nodes}")));
    }
    let n = start.len();
    let lerp = |t: f64| start + (goal - start) * t;
    let mut curve = match kind {
        Sketch::Line => Curve::from_fn(n_nodes, n, lerp)?,
        Sketch::Sine { coord, amplitude } => {
            if *coord >= n {
                return Err(Error::Invalid(format!("sine coordinate {coord} out of range for dimension {n}")));
            }
            Curve::from_fn(n_nodes, n, |t| {
                let mut x = lerp(t);
                x[*coord] += amplitude * (PI * t).sin();
                x
            })?
        }
        Sketch::LShape { corner, radius } => {
            let path = LPath::new(planar(start, n)?, *corner, planar(goal, n)?, *radius)?;
            Curve::from_fn(n_nodes, n, |t| {
                let mut x = lerp(t);
                let [px, py] = path.at(t);
                x[0] = px;
                x[1] = py;
                x
            })?
        }
        Sketch::CircleArc { via } => {
            let arc = Arc3::new(planar(start, n)?, *via, planar(goal, n)?)?;
            Curve::from_fn(n_nodes, n, |t| {
                let mut x = lerp(t);
                let [px, py] = arc.at(t);
                x[0] = px;
                x[1] = py;
                x
            })?
        }
        Sketch::Waypoints(points) => waypoint_curve(points, start, goal, n_nodes)?,
        Sketch::Stacked(blocks) => {
            let total: usize = blocks.iter().map(|(m, _)| m).sum();
            if total != n {
                return Err(Error::DimensionMismatch { expected: n, found: total });
            }
            let mut nodes = nalgebra::DMatrix::zeros(n, n_nodes);
            let mut o = 0;
            for (m, k) in blocks {
                let part = sketch(k, &start.rows(o, *m).into_owned(), &goal.rows(o, *m).into_owned(), n_nodes)?;
                nodes.view_mut((o, 0), (*m, n_nodes)).copy_from(part.nodes());
                o += m;
            }
            Curve::new(nodes)?
        }
    };
    if (curve.start() - start).amax() > ENDPOINT_TOL {
        return Err(Error::EndpointMismatch { which: "start" });
    }
    if (curve.end() - goal).amax() > ENDPOINT_TOL {
        return Err(Error::EndpointMismatch { which: "end" });
    }
    let last = n_nodes - 1;
    curve.nodes_mut().set_column(0, start);
    curve.nodes_mut().set_column(last, goal);
    Ok(curve)
}

fn planar(x: &DVector<f64>, n: usize) -> Result<[f64; 2]> {
    if n < 2 {
        return Err(Error::Invalid("planar sketches need at least 2 coordinates".into()));
    }
    Ok([x[0], x[1]])
}

fn waypoint_curve(points: &[DVector<f64>], start: &DVector<f64>, goal: &DVector<f64>, n_nodes: usize) -> Result<Curve> {
    if points.len() < 2 {
        return Err(Error::Invalid("waypoint sketch needs at least 2 points".into()));
    }
    if let Some(p) = points.iter().find(|p| p.len() != start.len()) {
        return Err(Error::DimensionMismatch { expected: start.len(), found: p.len() });
    }
    if (&points[0] - start).amax() > ENDPOINT_TOL {
        return Err(Error::EndpointMismatch { which: "start" });
    }
    if (&points[points.len() - 1] - goal).amax() > ENDPOINT_TOL {
        return Err(Error::EndpointMismatch { which: "end" });
    }
    let segments = (points.len() - 1) as f64;
    Curve::from_fn(n_nodes, start.len(), |t| {
        let u = t * segments;
        let i = (u.floor() as usize).min(points.len() - 2);
        let w = u - i as f64;
        &points[i] * (1.0 - w) + &points[i + 1] * w
    })
}

/// Two legs with the corner replaced by a quadratic Bézier, traversed at
/// roughly uniform speed.
struct LPath {
    a: [f64; 2],
    b: [f64; 2],
    p0: [f64; 2],
    corner: [f64; 2],
    p1: [f64; 2],
    /// Cumulative lengths at the end of leg 1, the bend and leg 2.
    marks: [f64; 3],
    bend: Vec<f64>,
}

const BEND_SAMPLES: usize = 256;

fn lerp2(p: [f64; 2], q: [f64; 2], w: f64) -> [f64; 2] {
    [p[0] + (q[0] - p[0]) * w, p[1] + (q[1] - p[1]) * w]
}

fn dist2(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

impl LPath {
    fn new(p0: [f64; 2], corner: [f64; 2], p1: [f64; 2], radius: f64) -> Result<Self> {
        let (l0, l1) = (dist2(p0, corner), dist2(corner, p1));
        if !(radius >= 0.0 && radius < l0 && radius < l1) {
            return Err(Error::Invalid(format!("corner radius {radius} must be below both leg lengths ({l0}, {l1})")));
        }
        let a = lerp2(corner, p0, radius / l0);
        let b = lerp2(corner, p1, radius / l1);
        let mut path = Self { a, b, p0, corner, p1, marks: [0.0; 3], bend: Vec::with_capacity(BEND_SAMPLES + 1) };
        let mut acc = 0.0;
        let mut prev = a;
        path.bend.push(0.0);
        for i in 1..=BEND_SAMPLES {
            let q = path.bezier(i as f64 / BEND_SAMPLES as f64);
            acc += dist2(prev, q);
            path.bend.push(acc);
            prev = q;
        }
        let m0 = l0 - radius;
        path.marks = [m0, m0 + acc, m0 + acc + l1 - radius];
        Ok(path)
    }

    fn bezier(&self, u: f64) -> [f64; 2] {
        lerp2(lerp2(self.a, self.corner, u), lerp2(self.corner, self.b, u), u)
    }

    fn at(&self, t: f64) -> [f64; 2] {
        let [m0, m1, m2] = self.marks;
        let s = t * m2;
        if s <= m0 {
            return lerp2(self.p0, self.a, if m0 > 0.0 { s / m0 } else { 1.0 });
        }
        if s >= m1 {
            let rest = m2 - m1;
            return lerp2(self.b, self.p1, if rest > 0.0 { (s - m1) / rest } else { 1.0 });
        }
        let target = s - m0;
        let i = self.bend.partition_point(|&l| l < target).clamp(1, BEND_SAMPLES);
        let (lo, hi) = (self.bend[i - 1], self.bend[i]);
        let w = if hi > lo { (target - lo) / (hi - lo) } else { 0.0 };
        self.bezier((i as f64 - 1.0 + w) / BEND_SAMPLES as f64)
    }
}

/// Circle arc from `p0` through `via` to `p1` at constant angular speed.
struct Arc3 {
    center: [f64; 2],
    radius: f64,
    a0: f64,
    sweep: f64,
}

impl Arc3 {
    fn new(p0: [f64; 2], via: [f64; 2], p1: [f64; 2]) -> Result<Self> {
        let (ax, ay) = (via[0] - p0[0], via[1] - p0[1]);
        let (bx, by) = (p1[0] - p0[0], p1[1] - p0[1]);
        let det = 2.0 * (ax * by - ay * bx);
        let scale = (ax * ax + ay * ay).max(bx * bx + by * by);
        if det.abs() <= 1e-12 * scale {
            return Err(Error::Invalid("circle arc points are collinear".into()));
        }
        let (a2, b2) = (ax * ax + ay * ay, bx * bx + by * by);
        let ux = (by * a2 - ay * b2) / det;
        let uy = (ax * b2 - bx * a2) / det;
        let center = [p0[0] + ux, p0[1] + uy];
        let angle = |p: [f64; 2]| (p[1] - center[1]).atan2(p[0] - center[0]);
        let (a0, av, a1) = (angle(p0), angle(via), angle(p1));
        let ccw = |from: f64, to: f64| (to - from).rem_euclid(2.0 * PI);
        let sweep = if ccw(a0, av) < ccw(a0, a1) { ccw(a0, a1) } else { ccw(a0, a1) - 2.0 * PI };
        Ok(Self { center, radius: ux.hypot(uy), a0, sweep })
    }

    fn at(&self, t: f64) -> [f64; 2] {
        let (s, c) = (self.a0 + self.sweep * t).sin_cos();
        [self.center[0] + self.radius * c, self.center[1] + self.radius * s]
    }
}

/// Everything needed to run one planning problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: System,
    pub barrier: BarrierField,
    pub start: DVector<f64>,
    pub goal: DVector<f64>,
    pub sketch: Sketch,
    pub k: f64,
    pub n_nodes: usize,
    pub s_max: f64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn metric(&self) -> Result<Box<dyn MetricField>> {
        self.system.metric(self.k, &self.barrier)
    }

    pub fn sketch_curve(&self) -> Result<Curve> {
        sketch(&self.sketch, &self.start, &self.goal, self.n_nodes)
    }

    /// First holonomic constraint violated by a boundary state, with its
    /// value.
    pub fn boundary_violation(&self, tol: f64) -> Option<(String, f64)> {
        for x in [&self.start, &self.goal] {
            if x.len() != self.n() {
                return None;
            }
            for q in &self.system.spec.holonomic {
                let v = (q.value)(x);
                if !(v.abs() <= tol) {
                    return Some((q.name.clone(), v));
                }
            }
        }
        None
    }
}

fn base(
    name: &str,
    system: System,
    barrier: BarrierField,
    start: DVector<f64>,
    goal: DVector<f64>,
    sketch: Sketch,
) -> Scenario {
    Scenario {
        name: name.into(),
        system,
        barrier,
        start,
        goal,
        sketch,
        k: DEFAULT_K,
        n_nodes: DEFAULT_NODES,
        s_max: DEFAULT_S_MAX,
    }
}

/// Two point obstacles at `(±0.7, 0)` with `r = 0.1`, `R = 0.4`.
pub fn unicycle_obstacles() -> BarrierField {
    BarrierField::new(
        vec![
            BallObstacle::planar(-0.7, 0.0, 0.1, 0.4).expect("valid obstacle"),
            BallObstacle::planar(0.7, 0.0, 0.1, 0.4).expect("valid obstacle"),
        ],
        vec![],
    )
}

/// Smallest round amplitude keeping the sine sketch 0.2 away from both
/// obstacle points.
pub const UNICYCLE_SKETCH_AMPLITUDE: f64 = 0.6;

pub fn unicycle_scenario() -> Scenario {
    base(
        "unicycle-two-obstacles",
        unicycle(),
        unicycle_obstacles(),
        dvector![-1.0, 0.0, 0.0],
        dvector![1.0, 0.0, 0.0],
        Sketch::Sine { coord: 1, amplitude: UNICYCLE_SKETCH_AMPLITUDE },
    )
}

/// Balls of radius `r` whose hard boundaries touch the segment `p → q` from
/// the side of `outward`.
fn curb(p: [f64; 2], q: [f64; 2], outward: [f64; 2], r: f64) -> Vec<BallObstacle> {
    let len = dist2(p, q);
    let count = (len / r).ceil() as usize;
    (0..=count)
        .map(|i| {
            let c = lerp2(p, q, i as f64 / count as f64);
            BallObstacle::planar(c[0] + outward[0] * r, c[1] + outward[1] * r, r, 2.0 * r).expect("valid curb ball")
        })
        .collect()
}

/// Wheel-angle limits as 1-D balls on `θ` beyond `±limit`.
fn steering_limits(limit: f64) -> Vec<BallObstacle> {
    let r = 0.2;
    [-1.0, 1.0]
        .iter()
        .map(|s| BallObstacle::new(vec![s * (limit + r)], r, vec![2]).expect("valid steering limit"))
        .collect()
}

pub fn car_180(curbs: bool) -> Scenario {
    let mut obstacles = steering_limits(CAR_STEERING_LIMIT);
    if curbs {
        let h = CURB_STREET_WIDTH / 2.0;
        let r = CURB_BALL_RADIUS;
        obstacles.extend(curb([-4.0, h], [4.0, h], [0.0, 1.0], r));
        obstacles.extend(curb([-4.0, -h], [4.0, -h], [0.0, -1.0], r));
    }
    base(
        if curbs { "car-180-curbs" } else { "car-180" },
        car(CAR_WHEELBASE),
        BarrierField::new(obstacles, vec![]),
        dvector![0.0, 0.0, 0.0, 0.0],
        dvector![0.0, 0.0, 0.0, PI],
        Sketch::Sine { coord: 1, amplitude: 0.5 },
    )
}

/// A street running north into the corner, turning east. `width` is the
/// width of both streets.
pub fn car_corner(width: f64) -> Scenario {
    let h = width / 2.0;
    let r = CURB_BALL_RADIUS;
    let reach = 6.0;
    let mut obstacles = steering_limits(CAR_STEERING_LIMIT);
    obstacles.extend(curb([-h, -reach], [-h, h], [-1.0, 0.0], r));
    obstacles.extend(curb([-h, h], [reach, h], [0.0, 1.0], r));
    obstacles.extend(curb([h, -reach], [h, -h], [1.0, 0.0], r));
    obstacles.extend(curb([h, -h], [reach, -h], [0.0, -1.0], r));
    let name = if width >= CORNER_WIDE { "car-corner-wide" } else { "car-corner-narrow" };
    base(
        name,
        car(CAR_WHEELBASE),
        BarrierField::new(obstacles, vec![]),
        dvector![0.0, -4.0, 0.0, FRAC_PI_2],
        dvector![4.0, 0.0, 0.0, 0.0],
        Sketch::LShape { corner: [0.0, 0.0], radius: 1.0 },
    )
}

pub fn two_link_scenario(variant: TwoLinkVariant) -> Scenario {
    let (xi, xf) = two_link_boundary();
    let (name, sketch) = match variant {
        TwoLinkVariant::VerticalLine => ("twolink-vertical", Sketch::Line),
        TwoLinkVariant::CircularArc => {
            let ([cx, cy], r) = two_link_circle();
            ("twolink-arc", Sketch::CircleArc { via: [cx + r, cy] })
        }
    };
    base(name, two_link(variant), BarrierField::default(), xi, xf, sketch)
}

/// Several vehicles planned jointly, kept apart by pairwise collision
/// barriers on their planar positions.
#[derive(Debug, Clone)]
pub struct MultiVehicleSpec {
    pub members: Vec<Scenario>,
    pub r_c: f64,
    pub detection: f64,
}

impl MultiVehicleSpec {
    pub fn new(members: Vec<Scenario>, r_c: f64, detection: f64) -> Self {
        Self { members, r_c, detection }
    }

    pub fn n(&self) -> usize {
        self.members.iter().map(|m| m.n()).sum()
    }

    /// Offsets of each member block in the stacked state.
    pub fn offsets(&self) -> Vec<usize> {
        self.members
            .iter()
            .scan(0, |o, m| {
                let here = *o;
                *o += m.n();
                Some(here)
            })
            .collect()
    }

    /// Member barriers moved to their blocks plus one collision pair per
    /// unordered pair of vehicles.
    pub fn barrier(&self) -> Result<BarrierField> {
        let offsets = self.offsets();
        let mut field = BarrierField::default();
        for (m, &o) in self.members.iter().zip(&offsets) {
            for ob in &m.barrier.obstacles {
                let projection = ob.projection.iter().map(|i| i + o).collect();
                field.obstacles.push(BallObstacle::with_detection(
                    ob.center.clone(),
                    ob.radius,
                    ob.detection,
                    projection,
                )?);
            }
            for p in &m.barrier.pairs {
                field.pairs.push(CollisionPair::new(
                    p.vehicles,
                    (p.offsets.0 + o, p.offsets.1 + o),
                    p.radius,
                    p.detection,
                )?);
            }
        }
        for j in 0..offsets.len() {
            for k in j + 1..offsets.len() {
                field.pairs.push(CollisionPair::new((j, k), (offsets[j], offsets[k]), self.r_c, self.detection)?);
            }
        }
        Ok(field)
    }

    pub fn scenario(&self, name: &str) -> Result<Scenario> {
        let Some(first) = self.members.first() else {
            return Err(Error::Invalid("a multi-vehicle scenario needs at least one member".into()));
        };
        let stack = |f: fn(&Scenario) -> &DVector<f64>| {
            DVector::from_iterator(self.n(), self.members.iter().flat_map(|m| f(m).iter().copied().collect::<Vec<_>>()))
        };
        Ok(Scenario {
            name: name.into(),
            system: compose_systems(self.members.iter().map(|m| m.system.clone()).collect())?,
            barrier: self.barrier()?,
            start: stack(|m| &m.start),
            goal: stack(|m| &m.goal),
            sketch: Sketch::Stacked(self.members.iter().map(|m| (m.n(), m.sketch.clone())).collect()),
            k: first.k,
            n_nodes: first.n_nodes,
            s_max: first.s_max,
        })
    }
}

pub fn compose_multivehicle(members: Vec<Scenario>, r_c: f64, detection: f64) -> MultiVehicleSpec {
    MultiVehicleSpec::new(members, r_c, detection)
}

fn free_unicycle(start: DVector<f64>, goal: DVector<f64>, sketch: Sketch) -> Scenario {
    base("unicycle", unicycle(), BarrierField::default(), start, goal, sketch)
}

/// Two unicycles parked at `(0, ±1)` facing east exchange places along a
/// circle through both.
pub fn two_unicycle_swap() -> MultiVehicleSpec {
    compose_multivehicle(
        vec![
            free_unicycle(dvector![0.0, 1.0, 0.0], dvector![0.0, -1.0, 0.0], Sketch::CircleArc { via: [1.0, 0.0] }),
            free_unicycle(dvector![0.0, -1.0, 0.0], dvector![0.0, 1.0, 0.0], Sketch::CircleArc { via: [-1.0, 0.0] }),
        ],
        COLLISION_RADIUS,
        COLLISION_DETECTION,
    )
}

/// One unicycle drives east past the origin while the other drives north
/// through it.
pub fn two_unicycle_cross() -> MultiVehicleSpec {
    compose_multivehicle(
        vec![
            free_unicycle(
                dvector![-1.0, 0.0, FRAC_PI_2],
                dvector![1.0, 0.0, FRAC_PI_2],
                Sketch::Sine { coord: 1, amplitude: 0.5 },
            ),
            free_unicycle(dvector![0.0, -1.0, 0.0], dvector![0.0, 1.0, 0.0], Sketch::Line),
        ],
        COLLISION_RADIUS,
        COLLISION_DETECTION,
    )
}

/// `count` free unicycles side by side, used for scaling measurements.
pub fn unicycle_fleet(count: usize) -> MultiVehicleSpec {
    let members = (0..count)
        .map(|j| {
            let y = 2.0 * j as f64;
            free_unicycle(dvector![-1.0, y, 0.0], dvector![1.0, y, 0.0], Sketch::Sine { coord: 1, amplitude: 0.5 })
        })
        .collect();
    compose_multivehicle(members, COLLISION_RADIUS, COLLISION_DETECTION)
}

/// Looks up a built-in scenario by name.
pub fn scenario(name: &str) -> Result<Scenario> {
    match name {
        "unicycle-two-obstacles" => Ok(unicycle_scenario()),
        "car-180" => Ok(car_180(false)),
        "car-180-curbs" => Ok(car_180(true)),
        "car-corner-wide" => Ok(car_corner(CORNER_WIDE)),
        "car-corner-narrow" => Ok(car_corner(CORNER_NARROW)),
        "twolink-vertical" => Ok(two_link_scenario(TwoLinkVariant::VerticalLine)),
        "twolink-arc" => Ok(two_link_scenario(TwoLinkVariant::CircularArc)),
        "two-unicycle-swap" => two_unicycle_swap().scenario(name),
        "two-unicycle-cross" => two_unicycle_cross().scenario(name),
        _ => Err(Error::Invalid(format!("unknown scenario `{name}`; known: {}", SCENARIOS.join(", ")))),
    }
}
