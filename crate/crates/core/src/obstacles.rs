//! Barrier functions for ball obstacles and pairwise vehicle collisions.
//!
//! Each obstacle contributes `(min{0, (d² − R²)/(d² − r²)})²`, where `d` is
//! the distance from the projected state to the obstacle, `r` the hard radius
//! and `R` the detection radius. The term vanishes (with its gradient)
//! outside the detection shell and grows without bound towards the hard
//! boundary.

use nalgebra::DVector;

use crate::curve::Curve;
use crate::error::{Error, Result, Violation};
use crate::geometry::Barrier;

/// A ball in the subspace of state coordinates selected by `projection`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallObstacle {
    pub center: Vec<f64>,
    pub radius: f64,
    pub detection: f64,
    pub projection: Vec<usize>,
}

impl BallObstacle {
    /// Detection radius defaults to twice the hard radius.
    pub fn new(center: Vec<f64>, radius: f64, projection: Vec<usize>) -> Result<Self> {
        Self::with_detection(center, radius, 2.0 * radius, projection)
    }

    pub fn with_detection(center: Vec<f64>, radius: f64, detection: f64, projection: Vec<usize>) -> Result<Self> {
        if !(radius > 0.0 && detection > radius) {
            return Err(Error::Invalid(format!("obstacle needs 0 < r < R, got r = {radius}, R = {detection}")));
        }
        if center.len() != projection.len() {
            return Err(Error::DimensionMismatch { expected: projection.len(), found: center.len() });
        }
        for (i, p) in projection.iter().enumerate() {
            if projection[..i].contains(p) {
                return Err(Error::Invalid(format!("repeated projection index {p}")));
            }
        }
        Ok(Self { center, radius, detection, projection })
    }

    /// Planar obstacle on state coordinates `(0, 1)`.
    pub fn planar(cx: f64, cy: f64, radius: f64, detection: f64) -> Result<Self> {
        Self::with_detection(vec![cx, cy], radius, detection, vec![0, 1])
    }

    fn offset(&self, x: &DVector<f64>) -> Vec<f64> {
        self.projection.iter().zip(&self.center).map(|(&i, c)| x[i] - c).collect()
    }

    fn max_index(&self) -> usize {
        self.projection.iter().copied().max().unwrap_or(0)
    }
}

/// Keeps the `(x, y)` coordinates of two vehicles at least `radius` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionPair {
    pub vehicles: (usize, usize),
    /// State index of each vehicle's planar `x` coordinate (`y` follows it).
    pub offsets: (usize, usize),
    pub radius: f64,
    pub detection: f64,
}

impl CollisionPair {
    pub fn new(vehicles: (usize, usize), offsets: (usize, usize), radius: f64, detection: f64) -> Result<Self> {
        if vehicles.0 == vehicles.1 {
            return Err(Error::Invalid("collision pair needs two distinct vehicles".into()));
        }
        if !(radius > 0.0 && detection > radius) {
            return Err(Error::Invalid(format!(
                "collision pair needs 0 < r_c < R, got r_c = {radius}, R = {detection}"
            )));
        }
        Ok(Self { vehicles, offsets, radius, detection })
    }

    fn separation(&self, x: &DVector<f64>) -> [f64; 2] {
        let (a, b) = self.offsets;
        [x[a] - x[b], x[a + 1] - x[b + 1]]
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        let [dx, dy] = self.separation(x);
        dx.hypot(dy)
    }
}

/// The scalar barrier term and its derivative with respect to `d²`.
/// `None` when `d² <= r²`.
fn shell_term(d2: f64, r: f64, big_r: f64) -> Option<(f64, f64)> {
    let (r2, big_r2) = (r * r, big_r * big_r);
    if d2 <= r2 {
        return None;
    }
    if d2 >= big_r2 {
        return Some((0.0, 0.0));
    }
    let phi = (d2 - big_r2) / (d2 - r2);
    let dphi = (big_r2 - r2) / ((d2 - r2) * (d2 - r2));
    Some((phi * phi, 2.0 * phi * dphi))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BarrierField {
    pub obstacles: Vec<BallObstacle>,
    pub pairs: Vec<CollisionPair>,
}

/// Outcome of a clearance check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clearance {
    Clear,
    Violated { node: usize, violation: Violation },
}

impl Clearance {
    pub fn is_clear(&self) -> bool {
        matches!(self, Clearance::Clear)
    }
}

impl BarrierField {
    pub fn new(obstacles: Vec<BallObstacle>, pairs: Vec<CollisionPair>) -> Self {
        Self { obstacles, pairs }
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty() && self.pairs.is_empty()
    }

    /// Checks that every projection index fits a state of dimension `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        let too_big = self
            .obstacles
            .iter()
            .map(|o| o.max_index())
            .chain(self.pairs.iter().map(|p| p.offsets.0.max(p.offsets.1) + 1))
            .find(|&i| i >= n);
        match too_big {
            Some(i) => Err(Error::Invalid(format!("barrier refers to coordinate {i} of a {n}-dimensional state"))),
            None => Ok(()),
        }
    }

    /// First hard region containing `x`, if any.
    pub fn violation(&self, x: &DVector<f64>) -> Option<Violation> {
        for (i, o) in self.obstacles.iter().enumerate() {
            let d2: f64 = o.offset(x).iter().map(|d| d * d).sum();
            if d2 <= o.radius * o.radius {
                return Some(Violation::Ball(i));
            }
        }
        for (i, p) in self.pairs.iter().enumerate() {
            let [dx, dy] = p.separation(x);
            if dx * dx + dy * dy <= p.radius * p.radius {
                return Some(Violation::Pair(i));
            }
        }
        None
    }

    pub fn barrier(&self, x: &DVector<f64>) -> Result<f64> {
        let mut b = 1.0;
        for (i, o) in self.obstacles.iter().enumerate() {
            let d2: f64 = o.offset(x).iter().map(|d| d * d).sum();
            let (term, _) =
                shell_term(d2, o.radius, o.detection).ok_or(Error::InsideObstacle { violation: Violation::Ball(i) })?;
            b += term;
        }
        for (i, p) in self.pairs.iter().enumerate() {
            let [dx, dy] = p.separation(x);
            let (term, _) = shell_term(dx * dx + dy * dy, p.radius, p.detection)
                .ok_or(Error::InsideObstacle { violation: Violation::Pair(i) })?;
            b += term;
        }
        Ok(b)
    }

    pub fn barrier_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        for (i, o) in self.obstacles.iter().enumerate() {
            let off = o.offset(x);
            let d2: f64 = off.iter().map(|d| d * d).sum();
            let (_, slope) =
                shell_term(d2, o.radius, o.detection).ok_or(Error::InsideObstacle { violation: Violation::Ball(i) })?;
            if slope != 0.0 {
                for (&idx, d) in o.projection.iter().zip(&off) {
                    g[idx] += slope * 2.0 * d;
                }
            }
        }
        for (i, p) in self.pairs.iter().enumerate() {
            let [dx, dy] = p.separation(x);
            let (_, slope) = shell_term(dx * dx + dy * dy, p.radius, p.detection)
                .ok_or(Error::InsideObstacle { violation: Violation::Pair(i) })?;
            if slope != 0.0 {
                let (a, b) = p.offsets;
                g[a] += slope * 2.0 * dx;
                g[a + 1] += slope * 2.0 * dy;
                g[b] -= slope * 2.0 * dx;
                g[b + 1] -= slope * 2.0 * dy;
            }
        }
        Ok(g)
    }

    /// Whether every node of `c` is strictly outside all hard regions.
    pub fn sketch_clearance(&self, c: &Curve) -> Clearance {
        for a in 0..c.n_nodes() {
            if let Some(violation) = self.violation(&c.node(a).into_owned()) {
                return Clearance::Violated { node: a, violation };
            }
        }
        Clearance::Clear
    }
}

impl Barrier for BarrierField {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.barrier(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.barrier_gradient(x)
    }
}
