use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// A discretized curve `[0, 1] -> R^n` on the uniform grid `t_a = a / (N - 1)`.
///
/// Nodes are stored column-wise: column `a` is the state at `t_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    nodes: DMatrix<f64>,
}

impl Curve {
    pub fn new(nodes: DMatrix<f64>) -> Result<Self> {
        if nodes.ncols() < 2 {
            return Err(Error::Invalid(format!("a curve needs at least 2 nodes, got {}", nodes.ncols())));
        }
        if nodes.nrows() == 0 {
            return Err(Error::Invalid("curve has dimension 0".into()));
        }
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: &[DVector<f64>]) -> Result<Self> {
        let dim = nodes.first().map_or(0, |v| v.len());
        for v in nodes {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
        }
        Self::new(DMatrix::from_fn(dim, nodes.len(), |i, a| nodes[a][i]))
    }

    /// Samples `f(t)` on an `n_nodes` grid.
    pub fn from_fn(n_nodes: usize, dim: usize, mut f: impl FnMut(f64) -> DVector<f64>) -> Result<Self> {
        let mut nodes = DMatrix::zeros(dim, n_nodes);
        let last = n_nodes.saturating_sub(1).max(1) as f64;
        for a in 0..n_nodes {
            let v = f(a as f64 / last);
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
            }
            nodes.set_column(a, &v);
        }
        Self::new(nodes)
    }

    /// Straight segment between two states.
    pub fn line(from: &DVector<f64>, to: &DVector<f64>, n_nodes: usize) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::DimensionMismatch { expected: from.len(), found: to.len() });
        }
        Self::from_fn(n_nodes, from.len(), |t| from + (to - from) * t)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn dim(&self) -> usize {
        self.nodes.nrows()
    }

    /// Grid spacing in `t`.
    pub fn dt(&self) -> f64 {
        1.0 / (self.n_nodes() - 1) as f64
    }

    pub fn t(&self, a: usize) -> f64 {
        a as f64 / (self.n_nodes() - 1) as f64
    }

    pub fn node(&self, a: usize) -> DVectorView<'_, f64> {
        self.nodes.column(a)
    }

    pub fn start(&self) -> DVector<f64> {
        self.nodes.column(0).into_owned()
    }

    pub fn end(&self) -> DVector<f64> {
        self.nodes.column(self.n_nodes() - 1).into_owned()
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.nodes
    }

    pub fn into_nodes(self) -> DMatrix<f64> {
        self.nodes
    }

    pub fn reversed(&self) -> Self {
        let n = self.n_nodes();
        Self { nodes: DMatrix::from_fn(self.dim(), n, |i, a| self.nodes[(i, n - 1 - a)]) }
    }

    /// Velocity at every node: central differences inside, second-order
    /// one-sided stencils at the two ends.
    pub fn velocities(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let h = self.dt();
        let x = &self.nodes;
        let mut v = DMatrix::zeros(self.dim(), n);
        if n == 2 {
            let d = (x.column(1) - x.column(0)) / h;
            v.set_column(0, &d);
            v.set_column(1, &d);
            return v;
        }
        for a in 1..n - 1 {
            v.set_column(a, &((x.column(a + 1) - x.column(a - 1)) / (2.0 * h)));
        }
        // (−3x₀ + 4x₁ − x₂)/2h, written in differences so constant data gives exactly 0
        let (x0, xn) = (x.column(0), x.column(n - 1));
        v.set_column(0, &(((x.column(1) - x0) * 4.0 - (x.column(2) - x0)) / (2.0 * h)));
        v.set_column(n - 1, &(((xn - x.column(n - 2)) * 4.0 - (xn - x.column(n - 3))) / (2.0 * h)));
        v
    }

    /// Largest per-node Euclidean distance to another curve on the same grid.
    pub fn sup_distance(&self, other: &Curve) -> f64 {
        assert_eq!(self.nodes.shape(), other.nodes.shape(), "curves on different grids");
        (0..self.n_nodes()).map(|a| (self.nodes.column(a) - other.nodes.column(a)).norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|v| v.is_finite())
    }
}

/// Composite trapezoid rule on a uniform grid.
pub fn trapezoid(values: impl ExactSizeIterator<Item = f64>, h: f64) -> f64 {
    let n = values.len();
    values.enumerate().map(|(a, v)| if a == 0 || a + 1 == n { 0.5 * v } else { v }).sum::<f64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velocities_are_exact_for_quadratics() {
        let c = Curve::from_fn(11, 1, |t| DVector::from_element(1, t * t)).unwrap();
        let v = c.velocities();
        for a in 0..c.n_nodes() {
            assert!((v[(0, a)] - 2.0 * c.t(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let h = 0.1;
        let vals: Vec<f64> = (0..11).map(|a| 2.0 * a as f64 * h + 1.0).collect();
        assert!((trapezoid(vals.into_iter(), h) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_single_node() {
        assert!(Curve::new(DMatrix::zeros(2, 1)).is_err());
    }
}
