//! Riemannian metric fields, their Christoffel symbols, and the curve
//! quantities built on them (length and geodesic residual).
//!
//! Metrics here are always of the form `G(x) = b(x) H(x)`, with `H` coming
//! from the constraint encoding and `b >= 1` a barrier factor. The flow solver
//! only needs the contraction `Γ(x)(v, v)`, so [`MetricField`] exposes that
//! directly and lets structured metrics (conformal factors, block diagonal
//! multi-vehicle metrics) compute it without materializing the full
//! `n × n × n` symbol tensor.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::curve::Curve;
use crate::error::{Error, Result};

/// Condition estimate above which a metric is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e14;

/// `G(x)` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTensor {
    pub matrix: DMatrix<f64>,
}

impl MetricTensor {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn quadratic(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.matrix * v))
    }

    /// Largest relative asymmetry `|g_ij - g_ji| / max|g|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        (&self.matrix - self.matrix.transpose()).amax() / scale
    }

    /// Cholesky factor, rejecting numerically singular matrices.
    pub fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        spd_factor(&self.matrix)
    }

    /// `G⁻¹`, via the Cholesky factor.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(self.factor()?.inverse())
    }
}

/// `∂G/∂x_i` for every coordinate `i`; `slices[i][(j, k)] = ∂g_jk / ∂x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDerivatives {
    pub slices: Vec<DMatrix<f64>>,
}

impl MetricDerivatives {
    pub fn zeros(n: usize) -> Self {
        Self { slices: vec![DMatrix::zeros(n, n); n] }
    }

    pub fn dim(&self) -> usize {
        self.slices.len()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[i][(j, k)]
    }
}

/// `Γ^i_jk`, stored as one symmetric `n × n` matrix per upper index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelSymbols {
    pub slices: Vec<DMatrix<f64>>,
}

impl ChristoffelSymbols {
    pub fn dim(&self) -> usize {
        self.slices.len()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.slices[i][(j, k)]
    }

    /// `a^i = Σ_jk Γ^i_jk v_j v_k`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.slices.iter().map(|s| v.dot(&(s * v))))
    }
}

pub(crate) fn spd_factor(g: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(g.clone()).ok_or(Error::SingularMetric { condition: f64::INFINITY })?;
    // (max L_ii / min L_ii)^2 is a cheap lower bound on cond(G).
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let condition = (hi / lo).powi(2);
    if !condition.is_finite() || condition > SINGULAR_CONDITION {
        return Err(Error::SingularMetric { condition });
    }
    Ok(chol)
}

/// Christoffel symbols of the second kind,
/// `Γ^i_jk = ½ Σ_l g^il (∂g_lj/∂x_k + ∂g_lk/∂x_j − ∂g_jk/∂x_l)`.
pub fn christoffel(g: &MetricTensor, dg: &MetricDerivatives) -> Result<ChristoffelSymbols> {
    let n = g.dim();
    if dg.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: dg.dim() });
    }
    let inv = g.inverse()?;
    // first kind: first[l][(j, k)]
    let mut first = vec![DMatrix::zeros(n, n); n];
    for (l, f) in first.iter_mut().enumerate() {
        for j in 0..n {
            for k in j..n {
                let val = 0.5 * (dg.get(k, l, j) + dg.get(j, l, k) - dg.get(l, j, k));
                f[(j, k)] = val;
                f[(k, j)] = val;
            }
        }
    }
    let mut slices = vec![DMatrix::zeros(n, n); n];
    for (i, s) in slices.iter_mut().enumerate() {
        for (l, f) in first.iter().enumerate() {
            let w = inv[(i, l)];
            if w != 0.0 {
                *s += f * w;
            }
        }
        // symmetrize exactly; the sum above is symmetric up to roundoff only
        for j in 0..n {
            for k in j + 1..n {
                s[(k, j)] = s[(j, k)];
            }
        }
    }
    Ok(ChristoffelSymbols { slices })
}

/// `Γ(v, v)` straight from `G` and `∂G`, without building the full tensor.
pub fn contract_christoffel(g: &MetricTensor, dg: &MetricDerivatives, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.dim();
    // c_l = Σ_jk ½(∂_k g_lj + ∂_j g_lk − ∂_l g_jk) v_j v_k
    let mut directional = DMatrix::zeros(n, n);
    for (k, s) in dg.slices.iter().enumerate() {
        if v[k] != 0.0 {
            directional += s * v[k];
        }
    }
    let mut c = &directional * v;
    for l in 0..n {
        c[l] -= 0.5 * v.dot(&(&dg.slices[l] * v));
    }
    Ok(g.factor()?.solve(&c))
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// `∂G/∂x_i` by central differences of `metric`.
pub fn finite_difference_derivatives(
    metric: impl Fn(&DVector<f64>) -> Result<MetricTensor>,
    x: &DVector<f64>,
) -> Result<MetricDerivatives> {
    let n = x.len();
    let mut slices = Vec::with_capacity(n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let plus = metric(&probe)?.matrix;
        probe[i] = x[i] - h;
        let minus = metric(&probe)?.matrix;
        probe[i] = x[i];
        let mut d = (plus - minus) / (2.0 * h);
        // slices of a symmetric field are symmetric
        for j in 0..n {
            for k in j + 1..n {
                let avg = 0.5 * (d[(j, k)] + d[(k, j)]);
                d[(j, k)] = avg;
                d[(k, j)] = avg;
            }
        }
        slices.push(d);
    }
    Ok(MetricDerivatives { slices })
}

/// `Γ(v, v)` together with its linearization `w ↦ 2Γ(v, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicTerms {
    pub acceleration: DVector<f64>,
    /// `∂/∂v [Γ(v, v)]`, an `n × n` matrix.
    pub linearization: DMatrix<f64>,
}

impl GeodesicTerms {
    /// Frobenius norm of the linearization: the advection speed the flow
    /// sees along the curve.
    pub fn spread(&self) -> f64 {
        self.linearization.norm()
    }
}

/// `Γ(v, v)` and `2Γ(v, ·)` from `G` and `∂G`.
pub fn geodesic_terms_from(g: &MetricTensor, dg: &MetricDerivatives, v: &DVector<f64>) -> Result<GeodesicTerms> {
    let n = g.dim();
    let chol = g.factor()?;
    let mut directional = DMatrix::zeros(n, n);
    for (k, s) in dg.slices.iter().enumerate() {
        if v[k] != 0.0 {
            directional += s * v[k];
        }
    }
    // lin[(l, k)] = Σ_j Γ_l,jk v_j (Christoffel symbols of the first kind)
    let mut lin = DMatrix::zeros(n, n);
    for l in 0..n {
        for k in 0..n {
            lin[(l, k)] =
                0.5 * (directional[(l, k)] + dg.slices[k].row(l).transpose().dot(v) - dg.slices[l].column(k).dot(v));
        }
    }
    let acceleration = chol.solve(&(&lin * v));
    let linearization = chol.solve(&lin) * 2.0;
    Ok(GeodesicTerms { acceleration, linearization })
}

/// A smooth field of symmetric positive definite matrices on `R^n`.
///
/// Implementations must be deterministic: evaluating twice at the same state
/// returns bit-identical results.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor>;

    /// Defaults to central finite differences of [`MetricField::metric`].
    fn derivatives(&self, x: &DVector<f64>) -> Result<MetricDerivatives> {
        finite_difference_derivatives(|y| self.metric(y), x)
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<(MetricTensor, MetricDerivatives)> {
        Ok((self.metric(x)?, self.derivatives(x)?))
    }

    /// `Σ_jk Γ^i_jk(x) v_j v_k`.
    fn geodesic_acceleration(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (g, dg) = self.evaluate(x)?;
        contract_christoffel(&g, &dg, v)
    }

    /// `Γ(v, v)` plus the step-size bound used by the flow solver.
    fn geodesic_terms(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<GeodesicTerms> {
        let (g, dg) = self.evaluate(x)?;
        geodesic_terms_from(&g, &dg, v)
    }

    /// `G(x)⁻¹ w`.
    fn inverse_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.metric(x)?.factor()?.solve(w))
    }

    /// `vᵀ G(x) v`.
    fn norm_sq(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        Ok(self.metric(x)?.quadratic(v))
    }
}

macro_rules! forward_metric_field {
    ($($ptr:ty),*) => {$(
        impl<M: MetricField + ?Sized> MetricField for $ptr {
            fn dim(&self) -> usize { (**self).dim() }
            fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor> { (**self).metric(x) }
            fn derivatives(&self, x: &DVector<f64>) -> Result<MetricDerivatives> { (**self).derivatives(x) }
            fn evaluate(&self, x: &DVector<f64>) -> Result<(MetricTensor, MetricDerivatives)> { (**self).evaluate(x) }
            fn geodesic_acceleration(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
                (**self).geodesic_acceleration(x, v)
            }
            fn geodesic_terms(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<GeodesicTerms> {
                (**self).geodesic_terms(x, v)
            }
            fn inverse_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
                (**self).inverse_apply(x, w)
            }
            fn norm_sq(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> { (**self).norm_sq(x, v) }
        }
    )*};
}

forward_metric_field!(Box<M>, Arc<M>, &M);

/// The flat metric `G = I`.
#[derive(Debug, Clone, Copy)]
pub struct EuclideanMetric {
    pub n: usize,
}

impl EuclideanMetric {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl MetricField for EuclideanMetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, _x: &DVector<f64>) -> Result<MetricTensor> {
        Ok(MetricTensor::identity(self.n))
    }

    fn derivatives(&self, _x: &DVector<f64>) -> Result<MetricDerivatives> {
        Ok(MetricDerivatives::zeros(self.n))
    }

    fn geodesic_acceleration(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.n))
    }

    fn geodesic_terms(&self, _x: &DVector<f64>, _v: &DVector<f64>) -> Result<GeodesicTerms> {
        Ok(GeodesicTerms { acceleration: DVector::zeros(self.n), linearization: DMatrix::zeros(self.n, self.n) })
    }

    fn inverse_apply(&self, _x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(w.clone())
    }

    fn norm_sq(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        Ok(v.norm_squared())
    }
}

/// Metric given by closures, mostly for tests and ad hoc fields.
pub struct FnMetric<F> {
    n: usize,
    f: F,
}

impl<F> FnMetric<F>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F> MetricField for FnMetric<F>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor> {
        let g = (self.f)(x);
        if g.nrows() != self.n || g.ncols() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: g.nrows() });
        }
        Ok(MetricTensor::new(g))
    }
}

/// A scalar factor `b(x) >= 1` that scales the metric near obstacles.
pub trait Barrier: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// `b ≡ 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitBarrier;

impl Barrier for UnitBarrier {
    fn value(&self, _x: &DVector<f64>) -> Result<f64> {
        Ok(1.0)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(x.len()))
    }
}

/// Barrier from a value closure and a gradient closure.
pub struct FnBarrier<V, G> {
    value: V,
    gradient: G,
}

impl<V, G> FnBarrier<V, G>
where
    V: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(value: V, gradient: G) -> Self {
        Self { value, gradient }
    }
}

impl<V, G> Barrier for FnBarrier<V, G>
where
    V: Fn(&DVector<f64>) -> f64 + Send + Sync,
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((self.value)(x))
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.gradient)(x))
    }
}

impl<B: Barrier + ?Sized> Barrier for Box<B> {
    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        (**self).value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).gradient(x)
    }
}

/// `G = b·H` with `∂G/∂x_i = (∂b/∂x_i) H + b ∂H/∂x_i`.
pub struct ComposedMetric<H, B> {
    pub h: H,
    pub b: B,
}

pub fn compose_metric<H: MetricField, B: Barrier>(h: H, b: B) -> ComposedMetric<H, B> {
    ComposedMetric { h, b }
}

impl<H: MetricField, B: Barrier> MetricField for ComposedMetric<H, B> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor> {
        let b = self.b.value(x)?;
        let mut g = self.h.metric(x)?;
        if b != 1.0 {
            g.matrix *= b;
        }
        Ok(g)
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<MetricDerivatives> {
        let b = self.b.value(x)?;
        let grad = self.b.gradient(x)?;
        let (h, mut dh) = self.h.evaluate(x)?;
        for (i, s) in dh.slices.iter_mut().enumerate() {
            if b != 1.0 {
                *s *= b;
            }
            if grad[i] != 0.0 {
                *s += &h.matrix * grad[i];
            }
        }
        Ok(dh)
    }

    /// Uses the conformal identity
    /// `Γ_G(v, v) = Γ_H(v, v) + (β·v) v − ½ (vᵀHv) H⁻¹β` with `β = ∇b / b`,
    /// so the structure of `H` is preserved.
    fn geodesic_acceleration(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = self.h.geodesic_acceleration(x, v)?;
        let grad = self.b.gradient(x)?;
        if grad.iter().all(|&g| g == 0.0) {
            return Ok(acc);
        }
        let beta = grad / self.b.value(x)?;
        acc += v * beta.dot(v);
        acc -= self.h.inverse_apply(x, &beta)? * (0.5 * self.h.norm_sq(x, v)?);
        Ok(acc)
    }

    fn geodesic_terms(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<GeodesicTerms> {
        let mut terms = self.h.geodesic_terms(x, v)?;
        let grad = self.b.gradient(x)?;
        if grad.iter().all(|&g| g == 0.0) {
            return Ok(terms);
        }
        let beta = grad / self.b.value(x)?;
        let h_inv_beta = self.h.inverse_apply(x, &beta)?;
        let h_v = &self.h.metric(x)?.matrix * v;
        let beta_v = beta.dot(v);
        terms.acceleration += v * beta_v;
        terms.acceleration -= &h_inv_beta * (0.5 * h_v.dot(v));
        // ∂/∂v of (β·v) v − ½ (vᵀHv) H⁻¹β
        terms.linearization += v * beta.transpose() - &h_inv_beta * h_v.transpose();
        for i in 0..v.len() {
            terms.linearization[(i, i)] += beta_v;
        }
        Ok(terms)
    }

    fn inverse_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.h.inverse_apply(x, w)? / self.b.value(x)?)
    }

    fn norm_sq(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        Ok(self.b.value(x)? * self.h.norm_sq(x, v)?)
    }
}

/// Block-diagonal metric where block `j` depends only on its own coordinates.
///
/// Every operation is done block by block, so the per-state cost grows
/// linearly with the number of blocks.
pub struct BlockMetric {
    blocks: Vec<(usize, Box<dyn MetricField>)>,
    n: usize,
}

impl BlockMetric {
    pub fn new(blocks: Vec<Box<dyn MetricField>>) -> Self {
        let mut offset = 0;
        let blocks = blocks
            .into_iter()
            .map(|b| {
                let o = offset;
                offset += b.dim();
                (o, b)
            })
            .collect();
        Self { blocks, n: offset }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `(offset, dimension)` of every block.
    pub fn layout(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|(o, b)| (*o, b.dim())).collect()
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: x.len() });
        }
        Ok(())
    }

    fn per_block(
        &self,
        x: &DVector<f64>,
        w: &DVector<f64>,
        f: impl Fn(&dyn MetricField, &DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    ) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut out = DVector::zeros(self.n);
        for (o, b) in &self.blocks {
            let m = b.dim();
            let xb = x.rows(*o, m).into_owned();
            let wb = w.rows(*o, m).into_owned();
            out.rows_mut(*o, m).copy_from(&f(b.as_ref(), &xb, &wb)?);
        }
        Ok(out)
    }
}

impl MetricField for BlockMetric {
    fn dim(&self) -> usize {
        self.n
    }

    fn metric(&self, x: &DVector<f64>) -> Result<MetricTensor> {
        self.check(x)?;
        let mut g = DMatrix::zeros(self.n, self.n);
        for (o, b) in &self.blocks {
            let m = b.dim();
            let gb = b.metric(&x.rows(*o, m).into_owned())?;
            g.view_mut((*o, *o), (m, m)).copy_from(&gb.matrix);
        }
        Ok(MetricTensor::new(g))
    }

    fn derivatives(&self, x: &DVector<f64>) -> Result<MetricDerivatives> {
        self.check(x)?;
        let mut out = MetricDerivatives::zeros(self.n);
        for (o, b) in &self.blocks {
            let m = b.dim();
            let db = b.derivatives(&x.rows(*o, m).into_owned())?;
            for (i, s) in db.slices.iter().enumerate() {
                out.slices[o + i].view_mut((*o, *o), (m, m)).copy_from(s);
            }
        }
        Ok(out)
    }

    fn geodesic_acceleration(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.per_block(x, v, |b, xb, vb| b.geodesic_acceleration(xb, vb))
    }

    fn geodesic_terms(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<GeodesicTerms> {
        self.check(x)?;
        let mut acceleration = DVector::zeros(self.n);
        let mut linearization = DMatrix::zeros(self.n, self.n);
        for (o, b) in &self.blocks {
            let m = b.dim();
            let t = b.geodesic_terms(&x.rows(*o, m).into_owned(), &v.rows(*o, m).into_owned())?;
            acceleration.rows_mut(*o, m).copy_from(&t.acceleration);
            linearization.view_mut((*o, *o), (m, m)).copy_from(&t.linearization);
        }
        Ok(GeodesicTerms { acceleration, linearization })
    }

    fn inverse_apply(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.per_block(x, w, |b, xb, wb| b.inverse_apply(xb, wb))
    }

    fn norm_sq(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        let mut total = 0.0;
        for (o, b) in &self.blocks {
            let m = b.dim();
            total += b.norm_sq(&x.rows(*o, m).into_owned(), &v.rows(*o, m).into_owned())?;
        }
        Ok(total)
    }
}

/// Discrete length `Σ √(Δxᵀ G(midpoint) Δx)` over consecutive node pairs.
pub fn curve_length(c: &Curve, m: &dyn MetricField) -> Result<f64> {
    if c.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: c.dim() });
    }
    let mut total = 0.0;
    for a in 0..c.n_nodes() - 1 {
        let dx = c.node(a + 1) - c.node(a);
        if dx.iter().all(|&d| d == 0.0) {
            continue;
        }
        let mid = (c.node(a + 1) + c.node(a)) * 0.5;
        total += m.norm_sq(&mid, &dx)?.max(0.0).sqrt();
    }
    Ok(total)
}

/// `∂²v/∂t² + Γ(v)(∂v/∂t, ∂v/∂t)` at interior nodes (central differences);
/// the two endpoint columns are zero.
pub fn geodesic_residual(c: &Curve, m: &dyn MetricField) -> Result<nalgebra::DMatrix<f64>> {
    let n_nodes = c.n_nodes();
    if n_nodes < 3 {
        return Err(Error::Invalid(format!("geodesic residual needs at least 3 nodes, got {n_nodes}")));
    }
    if c.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: m.dim(), found: c.dim() });
    }
    let h = c.dt();
    let x = c.nodes();
    let mut out = DMatrix::zeros(c.dim(), n_nodes);
    for a in 1..n_nodes - 1 {
        let xa = x.column(a).into_owned();
        let v = (x.column(a + 1) - x.column(a - 1)) / (2.0 * h);
        let acc = (x.column(a + 1) - &xa * 2.0 + x.column(a - 1)) / (h * h);
        let gamma = m.geodesic_acceleration(&xa, &v)?;
        out.set_column(a, &(acc + gamma));
    }
    Ok(out)
}
