//! Open-loop controls from a planned curve, and rollouts of the true dynamics.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{gram_schmidt, orthonormal_frame, ConstraintSpec, DEFAULT_RANK_TOL};
use crate::curve::{trapezoid, Curve};
use crate::error::{Error, Result};

/// Control samples on the uniform grid of the curve they came from.
/// Column `a` holds `u(t_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    samples: DMatrix<f64>,
}

impl ControlSignal {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        if samples.ncols() < 2 {
            return Err(Error::Invalid("a control signal needs at least 2 samples".into()));
        }
        if samples.iter().any(|u| !u.is_finite()) {
            let node = samples.column_iter().position(|c| c.iter().any(|u| !u.is_finite())).unwrap_or(0);
            return Err(Error::NonFinite { node, s: 0.0 });
        }
        Ok(Self { samples })
    }

    pub fn zeros(p: usize, n_nodes: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(p, n_nodes))
    }

    pub fn n_inputs(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.samples.ncols()
    }

    pub fn dt(&self) -> f64 {
        1.0 / (self.n_nodes() - 1) as f64
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn at(&self, a: usize) -> DVector<f64> {
        self.samples.column(a).into_owned()
    }

    /// Same samples played backwards in time.
    pub fn reversed(&self) -> Self {
        let n = self.n_nodes();
        Self { samples: DMatrix::from_fn(self.n_inputs(), n, |i, a| self.samples[(i, n - 1 - a)]) }
    }
}

/// The input vector fields as columns. Declared actuation fields are used
/// as given; without them the orthonormal free frame stands in.
pub fn input_fields(spec: &ConstraintSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if spec.actuation.is_empty() {
        return Ok(orthonormal_frame(spec, x, DEFAULT_RANK_TOL)?.ff);
    }
    let f = spec.actuation_matrix(x)?;
    let cols: Vec<DVector<f64>> = f.column_iter().map(|c| c.into_owned()).collect();
    let rank = gram_schmidt(&cols, DEFAULT_RANK_TOL).len();
    if rank < f.ncols() {
        return Err(Error::RankDrop { expected: f.ncols(), found: rank });
    }
    Ok(f)
}

/// `u = (FᵀF)⁻¹ Fᵀ ẋ` at every node of `x_sol`.
pub fn extract_controls(x_sol: &Curve, spec: &ConstraintSpec) -> Result<ControlSignal> {
    if x_sol.dim() != spec.n {
        return Err(Error::DimensionMismatch { expected: spec.n, found: x_sol.dim() });
    }
    let xdot = x_sol.velocities();
    let mut samples = DMatrix::zeros(0, 0);
    for a in 0..x_sol.n_nodes() {
        let f = input_fields(spec, &x_sol.node(a).into_owned())?;
        if a == 0 {
            samples = DMatrix::zeros(f.ncols(), x_sol.n_nodes());
        }
        let gram = f.transpose() * &f;
        let chol = gram.cholesky().ok_or(Error::RankDrop { expected: f.ncols(), found: f.ncols() - 1 })?;
        samples.set_column(a, &chol.solve(&(f.transpose() * xdot.column(a))));
    }
    ControlSignal::new(samples)
}

/// `∫₀¹ |u(t)|² dt` by the trapezoid rule.
pub fn energy(u: &ControlSignal) -> f64 {
    trapezoid(u.samples.column_iter().map(|c| c.norm_squared()), u.dt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Curve,
    /// `|x̃(1) − x_f|`.
    pub endpoint_error: f64,
    /// `max_a |x̃(t_a) − x_sol(t_a)|`.
    pub sup_error: f64,
    pub energy: f64,
}

fn drift(spec: &ConstraintSpec, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(input_fields(spec, x)? * u)
}

/// Integrates `ẋ = Σ u_i f_i(x)` from `x_sol(0)` with classical RK4 on the
/// grid of `u`, interpolating `u` linearly, and compares against `x_sol`.
pub fn rollout(spec: &ConstraintSpec, u: &ControlSignal, x_sol: &Curve) -> Result<Rollout> {
    if u.n_nodes() != x_sol.n_nodes() {
        return Err(Error::DimensionMismatch { expected: x_sol.n_nodes(), found: u.n_nodes() });
    }
    if x_sol.dim() != spec.n {
        return Err(Error::DimensionMismatch { expected: spec.n, found: x_sol.dim() });
    }
    let h = u.dt();
    let mut states = DMatrix::zeros(spec.n, u.n_nodes());
    let mut x = x_sol.start();
    states.set_column(0, &x);
    for a in 0..u.n_nodes() - 1 {
        let (u0, u1) = (u.at(a), u.at(a + 1));
        let um = (&u0 + &u1) * 0.5;
        let k1 = drift(spec, &x, &u0)?;
        let k2 = drift(spec, &(&x + &k1 * (0.5 * h)), &um)?;
        let k3 = drift(spec, &(&x + &k2 * (0.5 * h)), &um)?;
        let k4 = drift(spec, &(&x + &k3 * h), &u1)?;
        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: a + 1, s: 0.0 });
        }
        states.set_column(a + 1, &x);
    }
    let states = Curve::new(states)?;
    Ok(Rollout {
        endpoint_error: (states.end() - x_sol.end()).norm(),
        sup_error: states.sup_distance(x_sol),
        energy: energy(u),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn unicycle() -> ConstraintSpec {
        ConstraintSpec::actuation_first(3, vec![])
            .with_actuation(|x| dvector![x[2].cos(), x[2].sin(), 0.0])
            .with_actuation(|_| dvector![0.0, 0.0, 1.0])
    }

    #[test]
    fn sideways_slide_has_zero_control() {
        let c = Curve::from_fn(11, 3, |t| dvector![0.0, t, 0.0]).unwrap();
        let u = extract_controls(&c, &unicycle()).unwrap();
        assert!(u.samples().amax() < 1e-14);
    }

    #[test]
    fn stationary_curve_has_zero_control() {
        let c = Curve::from_fn(9, 3, |_| dvector![0.2, -0.4, 1.0]).unwrap();
        assert_eq!(extract_controls(&c, &unicycle()).unwrap().samples().amax(), 0.0);
    }

    #[test]
    fn zero_control_stays_put() {
        let c = Curve::line(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], 11).unwrap();
        let r = rollout(&unicycle(), &ControlSignal::zeros(2, 11).unwrap(), &c).unwrap();
        assert!(r.states.nodes().column_iter().all(|x| x == c.start()));
        assert!((r.endpoint_error - 1.0).abs() < 1e-15);
        assert_eq!(r.energy, 0.0);
    }

    #[test]
    fn straight_drive() {
        let c = Curve::line(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], 21).unwrap();
        let u = ControlSignal::new(DMatrix::from_fn(2, 21, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
        let r = rollout(&unicycle(), &u, &c).unwrap();
        for a in 0..21 {
            assert!((r.states.node(a) - dvector![c.t(a), 0.0, 0.0]).amax() < 1e-10);
        }
        assert!((r.energy - 1.0).abs() < 1e-14);
    }

    #[test]
    fn energy_of_sine() {
        let n = 201;
        let u = ControlSignal::new(DMatrix::from_fn(2, n, |i, a| {
            if i == 0 {
                (2.0 * PI * a as f64 / (n - 1) as f64).sin()
            } else {
                0.0
            }
        }))
        .unwrap();
        assert!((energy(&u) - 0.5).abs() < 1e-12);
        assert_eq!(energy(&u), energy(&u.reversed()));
    }

    #[test]
    fn dimension_checks() {
        let c = Curve::line(&dvector![0.0, 0.0], &dvector![1.0, 0.0], 5).unwrap();
        assert!(matches!(extract_controls(&c, &unicycle()), Err(Error::DimensionMismatch { .. })));
        let c3 = Curve::line(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 0.0, 0.0], 5).unwrap();
        let u = ControlSignal::zeros(2, 7).unwrap();
        assert!(rollout(&unicycle(), &u, &c3).is_err());
        assert!(ControlSignal::new(DMatrix::from_element(2, 3, f64::NAN)).is_err());
    }

    #[test]
    fn parallel_actuation_is_a_rank_drop() {
        let spec = ConstraintSpec::actuation_first(2, vec![])
            .with_actuation(|_| dvector![1.0, 0.0])
            .with_actuation(|_| dvector![2.0, 0.0]);
        let c = Curve::line(&dvector![0.0, 0.0], &dvector![1.0, 0.0], 5).unwrap();
        assert!(matches!(extract_controls(&c, &spec), Err(Error::RankDrop { .. })));
    }
}
