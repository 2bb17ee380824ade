//! Method-of-lines solver for the geometric heat flow
//! `∂_s v = ∂_t² v + Γ(v)(∂_t v, ∂_t v)` with pinned endpoints.
//!
//! Two time integrators are provided. [`Scheme::Explicit`] is forward Euler
//! with `Δs = σ Δt² / (1 + Γ̂)`. [`Scheme::Rosenbrock`] is the two-stage
//! L-stable Rosenbrock method ROS2: one block tridiagonal factorization of
//! `I − γΔs J` per step, `Δs` chosen from an embedded first-order error
//! estimate, and steps that leave the domain of the metric rejected.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::constraints::{constraint_residual, ConstraintSpec};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_residual, MetricField};

/// Smallest step either scheme will take.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Explicit,
    Rosenbrock {
        /// Local error tolerance per step, mixed absolute/relative.
        tolerance: f64,
        /// Upper bound on `Δs`.
        max_step: f64,
        /// Upper bound on the factor by which `tr G` may grow at a node in
        /// one step. Keeps nodes from jumping onto a barrier's hard boundary.
        max_metric_growth: f64,
    },
}

impl Scheme {
    pub fn rosenbrock() -> Self {
        Scheme::Rosenbrock { tolerance: 1e-3, max_step: 0.25, max_metric_growth: 4.0 }
    }
}

impl Default for Scheme {
    fn default() -> Self {
        Self::rosenbrock()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub s_max: f64,
    /// `σ` in `Δs = σ Δt² / (1 + Γ̂)`; also sets the first Rosenbrock step.
    pub step_safety: f64,
    /// Values of `s` at which to record the curve. Entries outside `(0, s_max]`
    /// are ignored; `0` and `s_max` are always recorded.
    pub snapshots: Vec<f64>,
    pub max_steps: usize,
    /// Allowed length increase per step, relative to the sketch length.
    /// Enforced by the explicit scheme only; see [`FlowSolution::max_length_increase`].
    pub length_slack: f64,
    pub scheme: Scheme,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self::new(4.0)
    }
}

impl FlowConfig {
    /// Defaults for horizon `s_max`, with a geometric snapshot schedule.
    pub fn new(s_max: f64) -> Self {
        Self {
            s_max,
            step_safety: 0.25,
            snapshots: geometric_schedule(s_max),
            max_steps: 10_000_000,
            length_slack: 1e-6,
            scheme: Scheme::default(),
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_snapshots(mut self, snapshots: Vec<f64>) -> Self {
        self.snapshots = snapshots;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_max >= 0.0 && self.s_max.is_finite()) {
            return Err(Error::Invalid(format!("s_max must be finite and >= 0, got {}", self.s_max)));
        }
        if !(self.step_safety > 0.0 && self.step_safety <= 1.0) {
            return Err(Error::Invalid(format!("step safety must lie in (0, 1], got {}", self.step_safety)));
        }
        if !(self.length_slack >= 0.0) {
            return Err(Error::Invalid("length slack must be >= 0".into()));
        }
        if let Scheme::Rosenbrock { tolerance, max_step, max_metric_growth } = self.scheme {
            if !(tolerance > 0.0 && max_step > 0.0 && max_metric_growth > 1.0) {
                return Err(Error::Invalid(
                    "tolerance and step bound must be positive and the metric growth bound above 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Snapshot times actually used: sorted, deduplicated, clipped to `(0, s_max]`,
    /// always ending at `s_max`.
    fn schedule(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.snapshots.iter().copied().filter(|&v| v > 0.0 && v < self.s_max).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        if self.s_max > 0.0 {
            s.push(self.s_max);
        }
        s
    }
}

/// `{1e-4, 1e-3, …}` below `s_max`, then `s_max`.
pub fn geometric_schedule(s_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 1e-4;
    while s < s_max {
        out.push(s);
        s *= 10.0;
    }
    if s_max > 0.0 {
        out.push(s_max);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub s: f64,
    /// Number of accepted steps taken to reach `s`.
    pub step: usize,
    pub curve: Curve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    pub snapshots: Vec<Snapshot>,
    /// Accepted step sizes in order.
    pub step_sizes: Vec<f64>,
    pub rejected: usize,
    /// Largest increase of the curve length over one accepted step (`0` if
    /// the length never grew).
    pub max_length_increase: f64,
}

impl FlowSolution {
    pub fn final_curve(&self) -> &Curve {
        &self.snapshots.last().expect("a solution always holds the initial snapshot").curve
    }

    pub fn into_final(mut self) -> Curve {
        self.snapshots.pop().expect("a solution always holds the initial snapshot").curve
    }

    pub fn steps(&self) -> usize {
        self.step_sizes.len()
    }
}

fn check_grid(c: &Curve) -> Result<()> {
    if c.n_nodes() < 3 {
        return Err(Error::Invalid(format!("the flow needs at least 3 nodes, got {}", c.n_nodes())));
    }
    Ok(())
}

/// Right-hand side of the flow: `v_tt + Γ(v_t, v_t)` at interior nodes, zero at the ends.
pub fn ghf_rhs(c: &Curve, m: &dyn MetricField) -> Result<DMatrix<f64>> {
    check_grid(c)?;
    geodesic_residual(c, m)
}

/// Per interior node, the Jacobian blocks of `Γ(v_t, v_t)`: with respect to
/// the node itself (`state`) and to the velocity (`velocity`).
struct Linearization {
    velocity: DMatrix<f64>,
    state: DMatrix<f64>,
}

/// Right-hand side and its linearization at every interior node. The state
/// block comes from forward differences of the geodesic acceleration.
fn rhs_with_linearization(c: &Curve, m: &dyn MetricField) -> Result<(DMatrix<f64>, Vec<Linearization>)> {
    let n_nodes = c.n_nodes();
    let n = c.dim();
    let h = c.dt();
    let x = c.nodes();
    let mut rhs = DMatrix::zeros(n, n_nodes);
    let mut lin = Vec::with_capacity(n_nodes - 2);
    for a in 1..n_nodes - 1 {
        let xa = x.column(a).into_owned();
        let v = (x.column(a + 1) - x.column(a - 1)) / (2.0 * h);
        let t = m.geodesic_terms(&xa, &v)?;
        let mut state = DMatrix::zeros(n, n);
        for i in 0..n {
            let step = 1e-6 * xa[i].abs().max(1.0);
            let mut xp = xa.clone();
            xp[i] += step;
            // a perturbed node that leaves the domain just drops that column
            if let Ok(ap) = m.geodesic_acceleration(&xp, &v) {
                state.set_column(i, &((ap - &t.acceleration) / step));
            }
        }
        let acc = (x.column(a + 1) - &xa * 2.0 + x.column(a - 1)) / (h * h);
        rhs.set_column(a, &(acc + t.acceleration));
        lin.push(Linearization { velocity: t.linearization, state });
    }
    Ok((rhs, lin))
}

/// Length of a curve together with `tr G` at each node.
struct Measure {
    length: f64,
    scales: Vec<f64>,
}

/// Evaluates the metric at every node as well as at the segment midpoints,
/// so a curve whose nodes entered an obstacle is reported even if no
/// midpoint did.
fn measure(c: &Curve, m: &dyn MetricField) -> Result<Measure> {
    let x = c.nodes();
    let mut length = 0.0;
    let mut scales = Vec::with_capacity(c.n_nodes());
    for a in 0..c.n_nodes() {
        let xa = x.column(a).into_owned();
        scales.push(m.metric(&xa)?.matrix.trace());
        if a + 1 < c.n_nodes() {
            let d = x.column(a + 1) - &xa;
            if d.iter().any(|&e| e != 0.0) {
                let mid = (x.column(a + 1) + &xa) * 0.5;
                length += m.norm_sq(&mid, &d)?.sqrt();
            }
        }
    }
    Ok(Measure { length, scales })
}

/// LU factorization of a block tridiagonal matrix by block elimination.
pub struct BlockTridiagonalLu {
    lower: Vec<DMatrix<f64>>,
    pivots: Vec<LU<f64, Dyn, Dyn>>,
    /// `S_i⁻¹ upper_i`, where `S_i` is the `i`-th pivot block.
    c_prime: Vec<DMatrix<f64>>,
}

impl BlockTridiagonalLu {
    /// Factors `lower_i δ_{i-1} + diag_i δ_i + upper_i δ_{i+1}`. `None` when a
    /// pivot block is singular.
    pub fn new(lower: Vec<DMatrix<f64>>, diag: Vec<DMatrix<f64>>, upper: &[DMatrix<f64>]) -> Option<Self> {
        let len = diag.len();
        let mut pivots: Vec<LU<f64, Dyn, Dyn>> = Vec::with_capacity(len);
        let mut c_prime: Vec<DMatrix<f64>> = Vec::with_capacity(len);
        for (i, d) in diag.into_iter().enumerate() {
            let s = if i == 0 { d } else { d - &lower[i] * &c_prime[i - 1] };
            let lu = s.lu();
            if !lu.is_invertible() {
                return None;
            }
            c_prime.push(lu.solve(&upper[i])?);
            pivots.push(lu);
        }
        Some(Self { lower, pivots, c_prime })
    }

    pub fn solve(&self, rhs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let len = self.pivots.len();
        let mut d_prime: Vec<DVector<f64>> = Vec::with_capacity(len);
        for i in 0..len {
            let d = if i == 0 { rhs[0].clone() } else { &rhs[i] - &self.lower[i] * &d_prime[i - 1] };
            d_prime.push(self.pivots[i].solve(&d).expect("pivot blocks are checked at factorization"));
        }
        let mut out = vec![DVector::zeros(0); len];
        for i in (0..len).rev() {
            out[i] = if i + 1 == len { d_prime[i].clone() } else { &d_prime[i] - &self.c_prime[i] * &out[i + 1] };
        }
        out
    }
}

/// Solves the block tridiagonal system `lower_i δ_{i-1} + diag_i δ_i + upper_i δ_{i+1} = rhs_i`.
/// Returns `None` when a pivot block is singular.
pub fn solve_block_tridiagonal(
    lower: &[DMatrix<f64>],
    diag: &[DMatrix<f64>],
    upper: &[DMatrix<f64>],
    rhs: &[DVector<f64>],
) -> Option<Vec<DVector<f64>>> {
    Some(BlockTridiagonalLu::new(lower.to_vec(), diag.to_vec(), upper)?.solve(rhs))
}

/// Factors `I − h J` over the interior nodes, `J` being the Jacobian of the
/// right-hand side.
fn factor_shifted_jacobian(lin: &[Linearization], dt: f64, h: f64) -> Option<BlockTridiagonalLu> {
    let n = lin.first().map_or(0, |l| l.state.nrows());
    let eye = DMatrix::<f64>::identity(n, n);
    let diffusion = h / (dt * dt);
    let advection = h / (2.0 * dt);
    let mut lower = Vec::with_capacity(lin.len());
    let mut diag = Vec::with_capacity(lin.len());
    let mut upper = Vec::with_capacity(lin.len());
    for l in lin {
        lower.push(-(&eye * diffusion) + &l.velocity * advection);
        diag.push(&eye * (1.0 + 2.0 * diffusion) - &l.state * h);
        upper.push(-(&eye * diffusion) - &l.velocity * advection);
    }
    BlockTridiagonalLu::new(lower, diag, &upper)
}

/// Applies a factored interior operator to a full-grid field whose end
/// columns are zero.
fn solve_interior(lu: &BlockTridiagonalLu, field: &DMatrix<f64>) -> DMatrix<f64> {
    let interior = field.ncols() - 2;
    let rhs: Vec<DVector<f64>> = (1..=interior).map(|a| field.column(a).into_owned()).collect();
    let mut out = DMatrix::zeros(field.nrows(), field.ncols());
    for (i, d) in lu.solve(&rhs).iter().enumerate() {
        out.set_column(i + 1, d);
    }
    out
}

/// `γ` of ROS2.
const ROS2_GAMMA: f64 = 1.0 + std::f64::consts::FRAC_1_SQRT_2;

/// Outcome of one attempted Rosenbrock step.
enum Trial {
    Accepted {
        next: Curve,
        measure: Measure,
        error: f64,
    },
    /// Local error above tolerance; the ratio is the scaled error.
    TooInaccurate(f64),
    /// Singular iteration matrix, non-finite values or a state outside the metric's domain.
    Infeasible,
}

#[allow(clippy::too_many_arguments)]
fn rosenbrock_trial(
    curve: &Curve,
    current: &Measure,
    m: &dyn MetricField,
    rhs: &DMatrix<f64>,
    lin: &[Linearization],
    h: f64,
    tolerance: f64,
    max_metric_growth: f64,
) -> Trial {
    let Some(lu) = factor_shifted_jacobian(lin, curve.dt(), ROS2_GAMMA * h) else {
        return Trial::Infeasible;
    };
    let k1 = solve_interior(&lu, rhs);
    let mut stage = curve.clone();
    *stage.nodes_mut() += &k1 * h;
    let Ok(rhs2) = geodesic_residual(&stage, m) else {
        return Trial::Infeasible;
    };
    let k2 = solve_interior(&lu, &(rhs2 - &k1 * 2.0));
    let estimate = (&k1 + &k2) * (0.5 * h);
    let mut next = curve.clone();
    *next.nodes_mut() += &k1 * (1.5 * h) + &k2 * (0.5 * h);
    if first_non_finite(next.nodes()).is_some() || first_non_finite(&estimate).is_some() {
        return Trial::Infeasible;
    }
    let error = estimate
        .iter()
        .zip(next.nodes().iter())
        .map(|(e, y)| e.abs() / (tolerance * (1.0 + y.abs())))
        .fold(0.0, f64::max);
    if error > 1.0 {
        return Trial::TooInaccurate(error);
    }
    let Ok(measure) = measure(&next, m) else {
        return Trial::Infeasible;
    };
    if measure.scales.iter().zip(&current.scales).any(|(new, old)| *new > max_metric_growth * old) {
        return Trial::Infeasible;
    }
    Trial::Accepted { next, measure, error }
}

/// Step-size factor from a scaled error estimate of a second-order method.
fn step_factor(error: f64) -> f64 {
    if error == 0.0 {
        return 4.0;
    }
    (0.9 / error.sqrt()).clamp(0.2, 4.0)
}

fn first_non_finite(c: &DMatrix<f64>) -> Option<usize> {
    c.column_iter().position(|col| col.iter().any(|e| !e.is_finite()))
}

/// Flows `sketch` under `m` up to `cfg.s_max`.
pub fn flow(sketch: &Curve, m: &dyn MetricField, cfg: &FlowConfig) -> Result<FlowSolution> {
    cfg.validate()?;
    check_grid(sketch)?;
    if sketch.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: sketch.dim() });
    }
    if let Some(node) = first_non_finite(sketch.nodes()) {
        return Err(Error::NonFinite { node, s: 0.0 });
    }
    let mut current = measure(sketch, m)?;
    let slack = cfg.length_slack * current.length;
    let dt = sketch.dt();
    let base_step = cfg.step_safety * dt * dt;

    let mut curve = sketch.clone();
    let mut s = 0.0;
    let mut snapshots = vec![Snapshot { s: 0.0, step: 0, curve: curve.clone() }];
    let mut step_sizes = Vec::new();
    let mut rejected = 0;
    let mut max_length_increase: f64 = 0.0;
    // step the implicit controller would like to take next
    let mut preferred = base_step;

    for target in cfg.schedule() {
        while s < target {
            if step_sizes.len() >= cfg.max_steps {
                return Err(Error::Invalid(format!("step budget of {} exhausted at s = {s}", cfg.max_steps)));
            }
            let remaining = target - s;
            let (rhs, lin) = rhs_with_linearization(&curve, m)?;
            let (ds, candidate, next_measure) = match cfg.scheme {
                Scheme::Explicit => {
                    let spread = lin.iter().map(|l| l.velocity.norm()).fold(0.0, f64::max);
                    let gamma_hat = 0.5 * spread * dt;
                    let ds = base_step / (1.0 + gamma_hat);
                    if !(ds >= MIN_STEP) {
                        return Err(Error::StepCollapse { s, step: ds });
                    }
                    let ds = ds.min(remaining);
                    let mut next = curve.clone();
                    *next.nodes_mut() += &rhs * ds;
                    if let Some(node) = first_non_finite(next.nodes()) {
                        return Err(Error::NonFinite { node, s: s + ds });
                    }
                    let next_measure = measure(&next, m)?;
                    let increase = next_measure.length - current.length;
                    if increase > slack {
                        return Err(Error::LengthIncrease { s: s + ds, increase });
                    }
                    (ds, next, next_measure)
                }
                Scheme::Rosenbrock { tolerance, max_step, max_metric_growth } => {
                    let mut h = preferred.min(max_step);
                    loop {
                        if h < MIN_STEP {
                            return Err(Error::StepCollapse { s, step: h });
                        }
                        let clipped = h.min(remaining);
                        match rosenbrock_trial(&curve, &current, m, &rhs, &lin, clipped, tolerance, max_metric_growth) {
                            Trial::Accepted { next, measure, error } => {
                                // a step shortened only to land on a snapshot says nothing about accuracy
                                preferred = if clipped < h { h } else { (h * step_factor(error)).min(max_step) };
                                break (clipped, next, measure);
                            }
                            Trial::TooInaccurate(error) => h = clipped * step_factor(error),
                            Trial::Infeasible => h = clipped * 0.5,
                        }
                        rejected += 1;
                    }
                }
            };
            max_length_increase = max_length_increase.max(next_measure.length - current.length);
            current = next_measure;
            curve = candidate;
            s = if ds == remaining { target } else { s + ds };
            step_sizes.push(ds);
        }
        snapshots.push(Snapshot { s: target, step: step_sizes.len(), curve: curve.clone() });
    }
    Ok(FlowSolution { snapshots, step_sizes, rejected, max_length_increase })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub s: f64,
    pub length: f64,
    pub constraint_residual: f64,
    pub max_geodesic_residual: f64,
}

/// Per-snapshot length, constraint residual and largest geodesic residual.
pub fn diagnose(sol: &FlowSolution, spec: &ConstraintSpec, m: &dyn MetricField) -> Result<Vec<DiagnosticRow>> {
    sol.snapshots
        .iter()
        .map(|sn| {
            Ok(DiagnosticRow {
                s: sn.s,
                length: crate::geometry::curve_length(&sn.curve, m)?,
                constraint_residual: constraint_residual(&sn.curve, spec)?,
                max_geodesic_residual: geodesic_residual(&sn.curve, m)?
                    .column_iter()
                    .map(|c| c.norm())
                    .fold(0.0, f64::max),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EuclideanMetric;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn sine_sketch(n_nodes: usize) -> Curve {
        Curve::from_fn(n_nodes, 2, |t| dvector![t, 0.3 * (PI * t).sin()]).unwrap()
    }

    #[test]
    fn straight_line_is_stationary() {
        let c = Curve::line(&dvector![0.0, 0.0], &dvector![1.0, 2.0], 11).unwrap();
        assert!(ghf_rhs(&c, &EuclideanMetric::new(2)).unwrap().amax() < 1e-10);
    }

    #[test]
    fn rhs_of_sine_is_its_second_derivative() {
        let c = Curve::from_fn(201, 1, |t| dvector![(PI * t).sin()]).unwrap();
        let r = ghf_rhs(&c, &EuclideanMetric::new(1)).unwrap();
        assert_eq!(r[(0, 0)], 0.0);
        assert_eq!(r[(0, 200)], 0.0);
        for a in 1..200 {
            let exact = -PI * PI * (PI * c.t(a)).sin();
            assert!((r[(0, a)] - exact).abs() < 1e-3, "node {a}");
        }
    }

    #[test]
    fn constant_curve_has_zero_rhs() {
        let p = dvector![0.3, -1.0];
        let c = Curve::line(&p, &p, 7).unwrap();
        assert_eq!(ghf_rhs(&c, &EuclideanMetric::new(2)).unwrap().amax(), 0.0);
    }

    #[test]
    fn zero_horizon_returns_sketch() {
        let c = sine_sketch(21);
        let sol = flow(&c, &EuclideanMetric::new(2), &FlowConfig::new(0.0)).unwrap();
        assert_eq!(sol.snapshots.len(), 1);
        assert_eq!(sol.final_curve(), &c);
    }

    #[test]
    fn euclidean_sine_straightens() {
        let line = Curve::line(&dvector![0.0, 0.0], &dvector![1.0, 0.0], 51).unwrap();
        for scheme in [Scheme::Explicit, Scheme::rosenbrock()] {
            let cfg = FlowConfig::new(1.0).with_scheme(scheme);
            let sol = flow(&sine_sketch(51), &EuclideanMetric::new(2), &cfg).unwrap();
            assert!(sol.final_curve().sup_distance(&line) < 1e-3, "{scheme:?}");
            let l0 = crate::geometry::curve_length(&sol.snapshots[0].curve, &EuclideanMetric::new(2)).unwrap();
            assert!(sol.max_length_increase <= 1e-6 * l0);
        }
    }

    #[test]
    fn endpoints_are_bit_identical() {
        let c = sine_sketch(31);
        let sol = flow(&c, &EuclideanMetric::new(2), &FlowConfig::new(0.5)).unwrap();
        for sn in &sol.snapshots {
            assert_eq!(sn.curve.start(), c.start());
            assert_eq!(sn.curve.end(), c.end());
        }
    }

    #[test]
    fn snapshots_follow_schedule() {
        let cfg = FlowConfig::new(0.5).with_snapshots(vec![0.2, 0.01, 3.0, -1.0, 0.01]);
        let sol = flow(&sine_sketch(21), &EuclideanMetric::new(2), &cfg).unwrap();
        let s: Vec<f64> = sol.snapshots.iter().map(|sn| sn.s).collect();
        assert_eq!(s, vec![0.0, 0.01, 0.2, 0.5]);
        assert_eq!(sol.snapshots.last().unwrap().step, sol.steps());
        let total: f64 = sol.step_sizes.iter().sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn default_schedule_is_geometric() {
        assert_eq!(geometric_schedule(4.0).len(), 6);
        assert_eq!(geometric_schedule(4.0)[5], 4.0);
        assert!(geometric_schedule(0.0).is_empty());
    }

    #[test]
    fn diagnose_lengths_decrease() {
        let spec = ConstraintSpec::constraint_first(2);
        let m = EuclideanMetric::new(2);
        // long enough for the sine mode to decay below the residual threshold
        let sol = flow(&sine_sketch(41), &m, &FlowConfig::new(3.0)).unwrap();
        let rows = diagnose(&sol, &spec, &m).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].length < w[0].length);
            assert!(w[1].s > w[0].s);
        }
        assert!(rows.last().unwrap().max_geodesic_residual < 1e-6);
    }

    #[test]
    fn block_tridiagonal_matches_dense_solve() {
        let n = 2;
        let len = 4;
        let blk = |a: f64, b: f64, c: f64, d: f64| DMatrix::from_row_slice(2, 2, &[a, b, c, d]);
        let lower: Vec<_> = (0..len).map(|i| blk(0.1 * i as f64, 0.2, -0.3, 0.1)).collect();
        let diag: Vec<_> = (0..len).map(|i| blk(3.0 + i as f64, 0.5, -0.4, 2.5)).collect();
        let upper: Vec<_> = (0..len).map(|i| blk(-0.2, 0.3 * i as f64, 0.1, 0.4)).collect();
        let rhs: Vec<_> = (0..len).map(|i| dvector![i as f64, 1.0 - i as f64]).collect();
        let mut dense = DMatrix::zeros(n * len, n * len);
        let mut b = DVector::zeros(n * len);
        for i in 0..len {
            dense.view_mut((n * i, n * i), (n, n)).copy_from(&diag[i]);
            if i > 0 {
                dense.view_mut((n * i, n * (i - 1)), (n, n)).copy_from(&lower[i]);
            }
            if i + 1 < len {
                dense.view_mut((n * i, n * (i + 1)), (n, n)).copy_from(&upper[i]);
            }
            b.rows_mut(n * i, n).copy_from(&rhs[i]);
        }
        let expected = dense.lu().solve(&b).unwrap();
        let got = solve_block_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..len {
            assert!((&got[i] - expected.rows(n * i, n)).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobian_blocks_match_finite_differences() {
        use crate::geometry::{compose_metric, FnBarrier, FnMetric};
        let h = FnMetric::new(3, |x: &DVector<f64>| {
            let n = dvector![-x[2].sin(), x[2].cos(), 0.3 * x[0]];
            DMatrix::identity(3, 3) + &n * n.transpose() * 20.0
        });
        let b = FnBarrier::new(|x: &DVector<f64>| 1.0 + x[1] * x[1], |x: &DVector<f64>| dvector![0.0, 2.0 * x[1], 0.0]);
        let m = compose_metric(h, b);
        let c = Curve::from_fn(7, 3, |t| dvector![t, 0.4 * (PI * t).sin(), 0.8 * (2.0 * PI * t).cos() - 0.8]).unwrap();
        let (rhs, lin) = rhs_with_linearization(&c, &m).unwrap();
        let dt = c.dt();
        let eps = 1e-6;
        for a in 1..6 {
            for (b_node, coeff) in [(a - 1, -1.0), (a, 0.0), (a + 1, 1.0)] {
                let l = &lin[a - 1];
                let exact = if coeff == 0.0 {
                    &l.state - DMatrix::identity(3, 3) * (2.0 / (dt * dt))
                } else {
                    DMatrix::identity(3, 3) / (dt * dt) + &l.velocity * (coeff / (2.0 * dt))
                };
                for i in 0..3 {
                    let mut cp = c.clone();
                    cp.nodes_mut()[(i, b_node)] += eps;
                    let col = (ghf_rhs(&cp, &m).unwrap().column(a) - rhs.column(a)) / eps;
                    let scale = exact.column(i).amax().max(1.0);
                    assert!((col - exact.column(i)).amax() < 1e-3 * scale, "node {a}, wrt {b_node}, coord {i}");
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let c = sine_sketch(11);
        let m = EuclideanMetric::new(2);
        let mut cfg = FlowConfig::new(1.0);
        cfg.step_safety = 1.5;
        assert!(flow(&c, &m, &cfg).is_err());
        assert!(flow(&c, &m, &FlowConfig::new(-1.0)).is_err());
        let two = Curve::line(&dvector![0.0, 0.0], &dvector![1.0, 0.0], 2).unwrap();
        assert!(flow(&two, &m, &FlowConfig::new(1.0)).is_err());
        assert!(matches!(
            flow(&c, &EuclideanMetric::new(3), &FlowConfig::new(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
