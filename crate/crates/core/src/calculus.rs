//! Δ-integration, the cylinder transform and the generalized exponential.
//!
//! Conventions: `e_p(t, s) = exp(∫_s^t ξ_{μ(τ)}(p(τ)) Δτ)`, so `e_p(t, t) = 1`
//! and `e_p(t, s) = 1 / e_p(s, t)`. Only positively regressive `p`
//! (`1 + μp > 0`) is supported, which keeps every exponential real and positive.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::timescale::{Piece, TimeGrid};

/// Values of a vector-valued function at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<TimeGrid>,
    values: Vec<DVector<f64>>,
}

/// The discrete form of `y`, `z` or `W(y)`.
pub type Trajectory = GridFunction;

impl GridFunction {
    pub fn new(grid: Arc<TimeGrid>, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(first) = values.first() {
            let n = first.len();
            if n == 0 || values.iter().any(|v| v.len() != n) {
                return Err(Error::DimensionMismatch("ragged grid function".into()));
            }
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn(grid: Arc<TimeGrid>, mut f: impl FnMut(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.times().map(&mut f).collect();
        Self::new(grid, values)
    }

    pub fn scalar(grid: Arc<TimeGrid>, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = grid
            .times()
            .map(|t| DVector::from_element(1, f(t)))
            .collect();
        GridFunction { grid, values }
    }

    pub fn from_scalars(grid: Arc<TimeGrid>, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| DVector::from_element(1, v)).collect())
    }

    pub fn constant(grid: Arc<TimeGrid>, value: &DVector<f64>) -> Self {
        let values = vec![value.clone(); grid.len()];
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<DVector<f64>> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn at(&self, t: f64) -> Result<&DVector<f64>> {
        Ok(&self.values[self.grid.index_of(t)?])
    }

    /// Component `k` at every node.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }

    /// `sup_t max_k |f_k(t) − g_k(t)|`.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    /// `sup_t max_k |f_k(t)|`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }
}

/// Δ-integral of `f` over `[a, b]`, both grid nodes.
pub fn delta_integral(f: &GridFunction, a: f64, b: f64) -> Result<DVector<f64>> {
    let grid = f.grid();
    let lo = grid.index_of(a)?;
    let hi = grid.index_of(b)?;
    if lo > hi {
        return Err(Error::BadParams(format!("integration bounds out of order: {a} > {b}")));
    }
    let mut acc = DVector::zeros(f.dim());
    for (i, w, _) in grid.partial_weights(lo, hi) {
        if w != 0.0 {
            acc.axpy(w, &f.values()[i], 1.0);
        }
    }
    Ok(acc)
}

/// Scalar Δ-integral over the node range `[lo, hi]` of `value(i, piece)`.
///
/// The integrand may take a different value at a right-scattered node on the
/// continuous stretch ending there (its left limit) and on the gap it opens.
pub fn integrate_nodes(
    grid: &TimeGrid,
    lo: usize,
    hi: usize,
    mut value: impl FnMut(usize, Piece) -> f64,
) -> f64 {
    grid.partial_weights(lo, hi)
        .filter(|&(_, w, _)| w != 0.0)
        .map(|(i, w, piece)| w * value(i, piece))
        .sum()
}

/// Running Δ-integral `∫_{s0}^{t_i}` of an integrand given by its left-limit
/// values `dense` and its gap values `gap`.
pub fn cumulative_integral_split(grid: &TimeGrid, dense: &[f64], gap: &[f64]) -> Vec<f64> {
    let nodes = grid.nodes();
    let mut out = Vec::with_capacity(nodes.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..nodes.len().saturating_sub(1) {
        acc += if nodes[i].is_right_scattered() {
            nodes[i].mu * gap[i]
        } else {
            0.5 * (nodes[i + 1].t - nodes[i].t) * (dense[i] + dense[i + 1])
        };
        out.push(acc);
    }
    out
}

/// Running Δ-integral `∫_{s0}^{t_i}` of scalar node values.
pub fn cumulative_integral(grid: &TimeGrid, values: &[f64]) -> Vec<f64> {
    cumulative_integral_split(grid, values, values)
}

/// Cylinder transform `ξ_h(z) = log(1 + zh)/h`, with `ξ_0(z) = z`.
pub fn cylinder(z: f64, h: f64) -> Result<f64> {
    if h == 0.0 {
        return Ok(z);
    }
    let arg = 1.0 + z * h;
    if arg <= 0.0 {
        return Err(Error::NonRegressive { mu: h, value: arg });
    }
    Ok((z * h).ln_1p() / h)
}

/// Regressive inverse `(⊖α)(t) = −α / (1 + μα)`.
pub fn circle_minus(alpha: f64, mu: f64) -> Result<f64> {
    let denom = 1.0 + mu * alpha;
    if denom == 0.0 {
        return Err(Error::NonRegressive { mu, value: denom });
    }
    Ok(-alpha / denom)
}

/// Circle-plus `α ⊕ β = α + β + μαβ`.
pub fn circle_plus(alpha: f64, beta: f64, mu: f64) -> f64 {
    alpha + beta + mu * alpha * beta
}

/// Precomputed `log e_p(t_i, s0)` at every node, so that
/// `e_p(t_j, t_i) = exp(L_j − L_i)`.
#[derive(Debug, Clone)]
pub struct ExpTable {
    log: Vec<f64>,
}

impl ExpTable {
    /// `p` is given per node. Regressivity is checked wherever the node's
    /// value enters the quadrature.
    pub fn new(grid: &TimeGrid, p: &[f64]) -> Result<Self> {
        Self::split(grid, p, p)
    }

    /// Like [`ExpTable::new`] for a `p` whose left limit at right-scattered
    /// nodes (`p_dense`) differs from its value there (`p_gap`).
    pub fn split(grid: &TimeGrid, p_dense: &[f64], p_gap: &[f64]) -> Result<Self> {
        let nodes = grid.nodes();
        let mut xi = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            // the right end of the window never carries a gap weight
            let h = if i + 1 < nodes.len() { n.mu } else { 0.0 };
            xi.push(cylinder(p_gap[i], h)?);
        }
        Ok(ExpTable { log: cumulative_integral_split(grid, p_dense, &xi) })
    }

    /// Table for `p = ⊖α`, whose left limit on continuous stretches is `−α`.
    pub fn ominus(grid: &TimeGrid, alpha: f64) -> Result<Self> {
        let gap = grid
            .nodes()
            .iter()
            .map(|n| circle_minus(alpha, n.mu))
            .collect::<Result<Vec<_>>>()?;
        let dense = vec![-alpha; gap.len()];
        Self::split(grid, &dense, &gap)
    }

    /// `e_p(t_j, t_i)` by node index.
    pub fn between(&self, j: usize, i: usize) -> f64 {
        (self.log[j] - self.log[i]).exp()
    }

    pub fn log_from_start(&self) -> &[f64] {
        &self.log
    }
}

/// `e_p(t, s)` for a scalar grid function `p`.
pub fn exp_fn(p: &GridFunction, t: f64, s: f64) -> Result<f64> {
    if p.dim() != 1 {
        return Err(Error::DimensionMismatch("e_p needs a scalar p".into()));
    }
    let grid = p.grid();
    let j = grid.index_of(t)?;
    let i = grid.index_of(s)?;
    if i == j {
        return Ok(1.0);
    }
    let (lo, hi) = (i.min(j), i.max(j));
    let nodes = grid.nodes();
    let mut xi = vec![0.0; nodes.len()];
    for k in lo..hi {
        xi[k] = cylinder(p.values()[k][0], nodes[k].mu)?;
    }
    let integral = integrate_nodes(grid, lo, hi, |k, piece| match piece {
        Piece::Dense => p.values()[k][0],
        Piece::Gap => xi[k],
    });
    Ok(if j >= i { integral.exp() } else { (-integral).exp() })
}

/// `e_{⊖α}(t, s)` on `grid`.
pub fn exp_ominus(alpha: f64, t: f64, s: f64, grid: &TimeGrid) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::BadParams(format!("alpha must be positive, got {alpha}")));
    }
    let j = grid.index_of(t)?;
    let i = grid.index_of(s)?;
    Ok(ExpTable::ominus(grid, alpha)?.between(j, i))
}

/// Δ-derivative at node `t`: the forward quotient to `σ(t)` at right-scattered
/// points and to the next node at right-dense points.
pub fn delta_derivative(f: &GridFunction, t: f64) -> Result<DVector<f64>> {
    let grid = f.grid();
    let i = grid.index_of(t)?;
    if i + 1 == grid.len() {
        return Err(Error::AtRightEdge(t));
    }
    let dt = grid.t(i + 1) - grid.t(i);
    Ok((&f.values()[i + 1] - &f.values()[i]) / dt)
}
