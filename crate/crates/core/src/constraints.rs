//! Encoding of holonomic constraints, non-holonomic covectors and actuation
//! fields into an orthonormal frame `F = (F_c | F_f)` and the metric core
//! `H = F D Fᵀ`, with `D = diag(k, …, k, 1, …, 1)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::curve::{trapezoid, Curve};
use crate::error::{Error, Result};
use crate::geometry::{finite_difference_derivatives, MetricDerivatives, MetricField, MetricTensor};

pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Analytic `∂H/∂x_i` for a given penalty `k`.
pub type DerivativeHook = Arc<dyn Fn(&DVector<f64>, f64) -> MetricDerivatives + Send + Sync>;

/// Relative tolerance below which a Gram–Schmidt residual counts as dependent.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Entries smaller than this are skipped when fixing column signs.
const SIGN_EPS: f64 = 1e-10;

/// `q(x) = 0` together with its gradient.
#[derive(Clone)]
pub struct HolonomicConstraint {
    pub name: String,
    pub value: ScalarField,
    pub gradient: VectorField,
}

impl fmt::Debug for HolonomicConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HolonomicConstraint").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    /// Build `F_c` from constraint gradients and covectors, complete to `F_f`.
    ConstraintFirst,
    /// Build `F_f` from actuation fields, complete to `F_c`.
    ActuationFirst,
}

/// Everything needed to build the frame at a state.
#[derive(Clone)]
pub struct ConstraintSpec {
    pub n: usize,
    pub holonomic: Vec<HolonomicConstraint>,
    pub nonholonomic: Vec<VectorField>,
    /// Actuation fields `f_i` of `ẋ = Σ u_i f_i(x)`; optional in constraint-first mode.
    pub actuation: Vec<VectorField>,
    pub mode: FrameMode,
    /// Rank `l` of the constrained distribution. When absent it is assumed
    /// to be full: `m_h + m_n` (constraint-first) or `n − p` (actuation-first).
    pub declared_rank: Option<usize>,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("n", &self.n)
            .field("holonomic", &self.holonomic)
            .field("nonholonomic", &self.nonholonomic.len())
            .field("actuation", &self.actuation.len())
            .field("mode", &self.mode)
            .field("declared_rank", &self.declared_rank)
            .finish()
    }
}

impl ConstraintSpec {
    pub fn constraint_first(n: usize) -> Self {
        Self {
            n,
            holonomic: Vec::new(),
            nonholonomic: Vec::new(),
            actuation: Vec::new(),
            mode: FrameMode::ConstraintFirst,
            declared_rank: None,
        }
    }

    pub fn actuation_first(n: usize, actuation: Vec<VectorField>) -> Self {
        Self { actuation, mode: FrameMode::ActuationFirst, ..Self::constraint_first(n) }
    }

    pub fn with_holonomic(
        mut self,
        name: impl Into<String>,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.holonomic.push(HolonomicConstraint {
            name: name.into(),
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        });
        self
    }

    pub fn with_covector(mut self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.nonholonomic.push(Arc::new(f));
        self
    }

    pub fn with_actuation(mut self, f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.actuation.push(Arc::new(f));
        self
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.declared_rank = Some(rank);
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            FrameMode::ConstraintFirst if self.holonomic.is_empty() && self.nonholonomic.is_empty() => {
                Err(Error::Invalid("constraint-first mode needs at least one constraint".into()))
            }
            FrameMode::ActuationFirst if self.actuation.is_empty() => {
                Err(Error::Invalid("actuation-first mode needs at least one actuation field".into()))
            }
            FrameMode::ActuationFirst if !(self.holonomic.is_empty() && self.nonholonomic.is_empty()) => {
                Err(Error::Invalid("actuation-first mode does not take constraint lists".into()))
            }
            _ => match self.declared_rank {
                Some(r) if r > self.n => {
                    Err(Error::Invalid(format!("declared rank {r} exceeds the state dimension {}", self.n)))
                }
                _ => Ok(()),
            },
        }
    }

    /// Number of raw constraint columns `m_h + m_n`.
    pub fn n_constraints(&self) -> usize {
        self.holonomic.len() + self.nonholonomic.len()
    }

    /// Rank `l` the frame must have at every state.
    pub fn expected_rank(&self) -> usize {
        self.declared_rank.unwrap_or(match self.mode {
            FrameMode::ConstraintFirst => self.n_constraints(),
            FrameMode::ActuationFirst => self.n.saturating_sub(self.actuation.len()),
        })
    }

    /// Number of free directions `p = n − l`.
    pub fn n_free(&self) -> usize {
        self.n - self.expected_rank()
    }

    fn eval_field(&self, f: &VectorField, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = f(x);
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: v.len() });
        }
        Ok(v)
    }

    /// Actuation matrix `[f_1(x) … f_p(x)]`.
    pub fn actuation_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let cols = self.actuation.iter().map(|f| self.eval_field(f, x)).collect::<Result<Vec<_>>>()?;
        Ok(columns_to_matrix(self.n, &cols))
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: x.len() });
        }
        Ok(())
    }
}

fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

/// `F̄_c(x)`: holonomic gradients followed by non-holonomic covectors, in
/// declaration order.
pub fn assemble_raw(spec: &ConstraintSpec, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    spec.check_state(x)?;
    let mut cols = Vec::with_capacity(spec.n_constraints());
    for q in &spec.holonomic {
        cols.push(spec.eval_field(&q.gradient, x)?);
    }
    for f in &spec.nonholonomic {
        cols.push(spec.eval_field(f, x)?);
    }
    Ok(columns_to_matrix(spec.n, &cols))
}

/// Orthonormal bases of the constrained and free directions at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub fc: DMatrix<f64>,
    pub ff: DMatrix<f64>,
}

impl Frame {
    pub fn n(&self) -> usize {
        self.fc.nrows()
    }

    /// `l`, the number of constrained directions.
    pub fn rank(&self) -> usize {
        self.fc.ncols()
    }

    pub fn n_free(&self) -> usize {
        self.ff.ncols()
    }

    /// `F = (F_c | F_f)`.
    pub fn full(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut f = DMatrix::zeros(n, n);
        f.columns_mut(0, self.rank()).copy_from(&self.fc);
        f.columns_mut(self.rank(), self.n_free()).copy_from(&self.ff);
        f
    }
}

/// `k` with `D = diag(k, …, k, 1, …, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyWeights {
    k: f64,
}

impl PenaltyWeights {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k >= 1.0) {
            return Err(Error::Invalid(format!("penalty k must be finite and >= 1, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `D` for `l` constrained directions out of `n`.
    pub fn diagonal(&self, n: usize, l: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| if i < l { self.k } else { 1.0 })
    }
}

/// Two-pass Gram–Schmidt of `v` against `basis`; returns the residual.
fn project_out(basis: &[DVector<f64>], v: &DVector<f64>) -> DVector<f64> {
    let mut r = v.clone();
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&r);
            r.axpy(-c, b, 1.0);
        }
    }
    r
}

fn fix_sign(v: &mut DVector<f64>) {
    if let Some(&first) = v.iter().find(|e| e.abs() > SIGN_EPS) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
}

/// Orthonormal basis of the span of `columns`, dropping columns whose
/// residual falls below `rank_tol` times the largest column norm.
pub fn gram_schmidt(columns: &[DVector<f64>], rank_tol: f64) -> Vec<DVector<f64>> {
    let scale = columns.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(columns.len());
    if scale == 0.0 {
        return basis;
    }
    for c in columns {
        let r = project_out(&basis, c);
        let norm = r.norm();
        if norm > rank_tol * scale {
            let mut u = r / norm;
            fix_sign(&mut u);
            basis.push(u);
        }
    }
    basis
}

/// Extends an orthonormal set to an orthonormal basis of `R^n`, greedily
/// taking the coordinate axis with the largest residual (lowest index on ties).
pub fn complete_basis(basis: &[DVector<f64>], n: usize) -> Vec<DVector<f64>> {
    let mut all: Vec<DVector<f64>> = basis.to_vec();
    let mut extra = Vec::with_capacity(n.saturating_sub(basis.len()));
    while all.len() < n {
        let mut best: Option<DVector<f64>> = None;
        let mut best_norm = 0.0;
        for i in 0..n {
            let r = project_out(&all, &DVector::from_fn(n, |j, _| if j == i { 1.0 } else { 0.0 }));
            let norm = r.norm();
            if norm > best_norm * (1.0 + 1e-12) {
                best_norm = norm;
                best = Some(r);
            }
        }
        let Some(r) = best else { break };
        let mut u = r / best_norm;
        fix_sign(&mut u);
        all.push(u.clone());
        extra.push(u);
    }
    extra
}

/// `F_c` and `F_f` at `x`.
pub fn orthonormal_frame(spec: &ConstraintSpec, x: &DVector<f64>, rank_tol: f64) -> Result<Frame> {
    spec.check_state(x)?;
    let n = spec.n;
    let expected = spec.expected_rank();
    let (fc, ff) = match spec.mode {
        FrameMode::ConstraintFirst => {
            let raw = assemble_raw(spec, x)?;
            let cols: Vec<_> = raw.column_iter().map(|c| c.into_owned()).collect();
            let fc = gram_schmidt(&cols, rank_tol);
            if fc.len() != expected {
                return Err(Error::RankDrop { expected, found: fc.len() });
            }
            let ff = complete_basis(&fc, n);
            (fc, ff)
        }
        FrameMode::ActuationFirst => {
            let cols = spec.actuation.iter().map(|f| spec.eval_field(f, x)).collect::<Result<Vec<_>>>()?;
            let ff = gram_schmidt(&cols, rank_tol);
            if n - ff.len() != expected {
                return Err(Error::RankDrop { expected, found: n - ff.len() });
            }
            let fc = complete_basis(&ff, n);
            (fc, ff)
        }
    };
    Ok(Frame { fc: columns_to_matrix(n, &fc), ff: columns_to_matrix(n, &ff) })
}

/// `H = F D Fᵀ`.
pub fn build_h(frame: &Frame, w: &PenaltyWeights) -> MetricTensor {
    let f = frame.full();
    let d = w.diagonal(frame.n(), frame.rank());
    let mut fd = f.clone();
    for (j, mut col) in fd.column_iter_mut().enumerate() {
        col *= d[j];
    }
    let mut h = fd * f.transpose();
    let n = h.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }
    MetricTensor::new(h)
}

/// `∫₀¹ |F_c(x)ᵀ ẋ|² dt` by the trapezoid rule.
pub fn constraint_residual(c: &Curve, spec: &ConstraintSpec) -> Result<f64> {
    constraint_residual_with_tol(c, spec, DEFAULT_RANK_TOL)
}

pub fn constraint_residual_with_tol(c: &Curve, spec: &ConstraintSpec, rank_tol: f64) -> Result<f64> {
    let v = c.velocities();
    let mut vals = Vec::with_capacity(c.n_nodes());
    for a in 0..c.n_nodes() {
        let frame = orthonormal_frame(spec, &c.node(a).into_owned(), rank_tol)?;
        vals.push((frame.fc.transpose() * v.column(a)).norm_squared());
    }
    Ok(trapezoid(vals.into_iter(), c.dt()))
}

/// The metric core `H(x)` of a [`ConstraintSpec`].
#[derive(Clone)]
pub struct ConstraintMetric {
    spec: ConstraintSpec,
    weights: PenaltyWeights,
    rank_tol: f64,
    hook: Option<DerivativeHook>,
}

impl ConstraintMetric {
    pub fn new(spec: ConstraintSpec, weights: PenaltyWeights) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, weights, rank_tol: DEFAULT_RANK_TOL, hook: None })
    }

    pub fn with_rank_tol(mut self, rank_tol: f64) -> Self {
        self.rank_tol = rank_tol;
        self
    }

    /// Replaces finite differences by an analytic `∂H/∂x_i`.
    pub fn with_derivatives(mut self, hook: DerivativeHook) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn spec(&self) -> &ConstraintSpec {
        &self.spec
    }

    pub fn weights(&self) -> PenaltyWeights {
        self.weights
    }

    pub fn frame(&self, x: &DVector<f64>) -> Result<Frame> {
        orthonormal_frame(&self.spec, x, self.rank_tol)
    }

    /// `H` through the projector onto the constrained directions,
    /// `H = I + (k − 1) F_c F_cᵀ`, which equals `F D Fᵀ` for any orthonormal
    /// completion.
    fn projector_metric(&self, x: &DVector<f64>) -> Result<MetricTensor> {
        self.spec.check_state(x)?;
        let n = self.spec.n;
        let k = self.weights.k();
        let expected = self.spec.expected_rank();
        let mut h = DMatrix::identity(n, n);
        match self.spec.mode {
            FrameMode::ConstraintFirst => {
                let raw = assemble_raw(&self.spec, x)?;
                let cols: Vec<_> = raw.column_iter().map(|c| c.into_owned()).collect();
                let fc = gram_schmidt(&cols, self.rank_tol);
                if fc.len() != expected {
                    return Err(Error::RankDrop { expected, found: fc.len() });
                }
                for u in &fc {
                    h.ger(k - 1.0, u, u, 1.0);
                }
            }
            FrameMode::ActuationFirst => {
                let cols =
                    self.spec.actuation.iter().map(|f| self.spec.eval_field(f, x)).collect::<Result<Vec<_>>>()?;
                let ff = gram_schmidt(&cols, self.rank_tol);
                if n - ff.len() != expected {
                    return Err(Error::RankDrop { expected, found: n - ff.len() });
                }
                h *= k;
                for u in &ff {
                    h.ger(1.0 - k, u, u, 1.0);
                }
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = avg;
                h[(j, i)] = avg;
            }
        }
        Ok(MetricTensor::new(h))
    }
}

impl MetricField for ConstraintMetric {
    fn dim(&self) -> usize {
        self.spec.n
    }

    fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor> {
        self.projector_metric(x)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<MetricDerivatives> {
        match &self.hook {
            Some(hook) => {
                self.spec.check_state(x)?;
                Ok(hook(x, self.weights.k()))
            }
            None => finite_difference_derivatives(|y| self.projector_metric(y), x),
        }
    }
}
