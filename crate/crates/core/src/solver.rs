//! Mild solutions of
//!
//! ```text
//! y^Δ(s) = A y(s) + F(s, y(s), ∫_{s0}^{s} H(s, τ, y(τ)) Δτ),   y(s0) = y0,
//! ```
//!
//! as fixed points of
//! `W(y)(s) = T(s − s0) y0 + ∫_{s0}^{s} T(s − σ(t)) F(t, y(t), z(t)) Δt`,
//! plus the hypothesis checks and the auxiliary inequality checks.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{cumulative_integral, ExpTable, GridFunction, Trajectory};
use crate::error::{Error, Result};
use crate::expr::{Args, Env, TimeContext, VectorExpr};
use crate::semigroup::{estimate_stability, spectral_norm, Generator, StabilityCert};
use crate::timescale::{Piece, TimeGrid, TimeScale};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;

/// Relative slack used when comparing the two sides of an inequality on nodes.
pub const GRONWALL_TOL: f64 = 1e-9;

/// Time differences closer than this share one matrix exponential.
const DT_QUANTUM: f64 = 1e-12;

/// Step norms below this (relative to the solution size) are round-off and are
/// left out of the observed contraction ratio.
const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub generator: Generator,
    pub f: VectorExpr,
    pub h: VectorExpr,
    pub timescale: TimeScale,
    pub steps_per_unit: usize,
    pub y0: DVector<f64>,
    pub lipschitz_f: Option<f64>,
    pub lipschitz_h: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Sample count of the Lipschitz and `M_F` estimates.
    pub samples: usize,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(
        generator: Generator,
        f: VectorExpr,
        h: VectorExpr,
        timescale: TimeScale,
        steps_per_unit: usize,
        y0: DVector<f64>,
    ) -> Result<Self> {
        let spec = ProblemSpec {
            generator,
            f,
            h,
            timescale,
            steps_per_unit,
            y0,
            lipschitz_f: None,
            lipschitz_h: None,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses `F` against `(s, x, z)` and `H` against `(s, t, y)`.
    pub fn parse(
        generator: Generator,
        f: &[&str],
        h: &[&str],
        timescale: TimeScale,
        steps_per_unit: usize,
        y0: &[f64],
    ) -> Result<Self> {
        let n = generator.dim();
        let f = VectorExpr::parse(f, &Env::for_f(n)).map_err(|(_, e)| Error::Expr(e))?;
        let h = VectorExpr::parse(h, &Env::for_h(n)).map_err(|(_, e)| Error::Expr(e))?;
        Self::new(generator, f, h, timescale, steps_per_unit, DVector::from_column_slice(y0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        for (what, len) in [("y0", self.y0.len()), ("F", self.f.len()), ("H", self.h.len())] {
            if len != n {
                return Err(Error::DimensionMismatch(format!(
                    "{what} has {len} components, the generator is {n}x{n}"
                )));
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::BadParams(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::BadParams("max_iter must be at least 1".into()));
        }
        if self.steps_per_unit == 0 {
            return Err(Error::BadParams("steps_per_unit must be at least 1".into()));
        }
        if self.samples < 100 {
            return Err(Error::BadParams(format!("samples must be at least 100, got {}", self.samples)));
        }
        for (what, l) in [("lipschitz_F", self.lipschitz_f), ("lipschitz_H", self.lipschitz_h)] {
            if let Some(l) = l {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::BadParams(format!("{what} must be a nonnegative number, got {l}")));
                }
            }
        }
        if self.y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParams("y0 must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn s0(&self) -> f64 {
        self.timescale.s0()
    }

    /// Right end `S` of the window.
    pub fn end(&self) -> f64 {
        self.timescale.end()
    }

    pub fn grid(&self) -> Result<Arc<TimeGrid>> {
        Ok(Arc::new(self.timescale.make_grid(self.steps_per_unit)?))
    }
}

/// Evaluates `eominus(a)` as `e_{⊖a}(s, s0)` on a time scale.
pub struct ScaleContext<'a> {
    pub ts: &'a TimeScale,
    pub s0: f64,
}

impl TimeContext for ScaleContext<'_> {
    fn exp_ominus_from_start(&self, alpha: f64, s: f64) -> std::result::Result<f64, String> {
        self.ts
            .exp_ominus_closed(alpha, s, self.s0)
            .map_err(|e| e.to_string())
    }
}

/// `F` and `H` with their evaluation context.
struct Rhs<'a> {
    f: &'a VectorExpr,
    h: &'a VectorExpr,
    ctx: ScaleContext<'a>,
    n: usize,
}

impl Rhs<'_> {
    fn f(&self, s: f64, x: &[f64], z: &[f64]) -> Result<DVector<f64>> {
        let vectors = [x, z];
        let scalars = [s];
        self.f
            .eval(&Args::new(&scalars, &vectors).with_context(&self.ctx))
            .map_err(|source| Error::ExprAt { t: s, tau: None, source })
    }

    fn h_into(&self, s: f64, t: f64, y: &[f64], out: &mut DVector<f64>) -> Result<()> {
        let vectors = [y];
        let scalars = [s, t];
        self.h
            .eval_into(&Args::new(&scalars, &vectors).with_context(&self.ctx), out)
            .map_err(|source| Error::ExprAt { t: s, tau: Some(t), source })
    }
}

/// Quadrature plan for `∫_{t_0}^{t_i} T(t_i − σ(t)) g(t) Δt` at every node.
struct Kernel {
    mats: Vec<DMatrix<f64>>,
    /// Matrix index of `T(t_i − t_0)`.
    start: Vec<usize>,
    offsets: Vec<usize>,
    /// `(node, weight, matrix index)`.
    entries: Vec<(u32, f64, u32)>,
}

impl Kernel {
    fn new(generator: &Generator, grid: &TimeGrid) -> Result<Self> {
        let n = generator.dim();
        let nodes = grid.nodes();
        let mut keys: HashMap<i64, u32> = HashMap::new();
        let mut mats: Vec<DMatrix<f64>> = Vec::new();
        let mut lookup = |dt: f64| -> Result<u32> {
            let key = (dt / DT_QUANTUM).round() as i64;
            if let Some(&m) = keys.get(&key) {
                return Ok(m);
            }
            let m = if key == 0 { DMatrix::identity(n, n) } else { generator.evolve(dt)? };
            let idx = mats.len() as u32;
            mats.push(m);
            keys.insert(key, idx);
            Ok(idx)
        };
        let mut start = Vec::with_capacity(nodes.len());
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut entries: Vec<(u32, f64, u32)> = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            start.push(lookup(node.t - nodes[0].t)? as usize);
            offsets.push(entries.len());
            let first = entries.len();
            for (k, w, piece) in grid.partial_weights(0, i) {
                if w == 0.0 {
                    continue;
                }
                let from = match piece {
                    Piece::Dense => nodes[k].t,
                    Piece::Gap => nodes[k].sigma,
                };
                let m = lookup(node.t - from)?;
                let fresh = entries.len() == first;
                match entries.last_mut() {
                    Some(last) if !fresh && last.0 == k as u32 && last.2 == m => last.1 += w,
                    _ => entries.push((k as u32, w, m)),
                }
            }
        }
        offsets.push(entries.len());
        Ok(Kernel { mats, start, offsets, entries })
    }

    /// `[T(t_i − t_0) y0] + ∫_{t_0}^{t_i} T(t_i − σ(t)) g(t) Δt` at every node.
    fn convolve(&self, g: &[DVector<f64>], y0: Option<&DVector<f64>>, n: usize) -> Vec<DVector<f64>> {
        (0..self.start.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = DVector::zeros(n);
                if let Some(y0) = y0 {
                    acc.gemv(1.0, &self.mats[self.start[i]], y0, 0.0);
                }
                for &(k, w, m) in &self.entries[self.offsets[i]..self.offsets[i + 1]] {
                    acc.gemv(w, &self.mats[m as usize], &g[k as usize], 1.0);
                }
                acc
            })
            .collect()
    }
}

/// Result of iterating `W` to a fixed point.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    /// The accepted iterate `ŷ`, with `‖ŷ − W(ŷ)‖_sup = residual ≤ tol`.
    pub trajectory: Trajectory,
    /// `z(t) = ∫_{s0}^{t} H(t, τ, ŷ(τ)) Δτ`.
    pub z: Trajectory,
    /// Number of applications of `W` before `ŷ` was reached.
    pub iterations: usize,
    /// `‖y_{k+1} − y_k‖_sup` for every application of `W`.
    pub step_norms: Vec<f64>,
    pub residual: f64,
}

/// A discretized problem: the grid, the kernel matrices and the right-hand side.
pub struct Solver<'a> {
    spec: &'a ProblemSpec,
    ts: TimeScale,
    context_s0: f64,
    grid: Arc<TimeGrid>,
    kernel: Kernel,
    with_initial: bool,
}

impl<'a> Solver<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let grid = spec.grid()?;
        let kernel = Kernel::new(&spec.generator, &grid)?;
        Ok(Solver {
            spec,
            ts: spec.timescale.clone(),
            context_s0: spec.s0(),
            grid,
            kernel,
            with_initial: true,
        })
    }

    /// The problem without the `T(s − s0) y0` term, on `ts`, with `eominus`
    /// still measured from the spec's `s0`.
    fn without_initial(spec: &'a ProblemSpec, ts: TimeScale) -> Result<Self> {
        spec.validate()?;
        let grid = Arc::new(ts.make_grid(spec.steps_per_unit)?);
        let kernel = Kernel::new(&spec.generator, &grid)?;
        Ok(Solver { spec, ts, context_s0: spec.s0(), grid, kernel, with_initial: false })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    fn rhs(&self) -> Rhs<'_> {
        Rhs {
            f: &self.spec.f,
            h: &self.spec.h,
            ctx: ScaleContext { ts: &self.ts, s0: self.context_s0 },
            n: self.spec.dim(),
        }
    }

    fn check(&self, y: &Trajectory) -> Result<()> {
        if !(Arc::ptr_eq(y.grid(), &self.grid) || **y.grid() == *self.grid) {
            return Err(Error::GridMismatch);
        }
        if y.dim() != self.spec.dim() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory has dimension {}, the problem {}",
                y.dim(),
                self.spec.dim()
            )));
        }
        Ok(())
    }

    fn trajectory(&self, values: Vec<DVector<f64>>) -> Trajectory {
        GridFunction::new(self.grid.clone(), values).expect("one value per node")
    }

    /// The initial guess `y ≡ y0`.
    pub fn constant_guess(&self) -> Trajectory {
        GridFunction::constant(self.grid.clone(), &self.spec.y0)
    }

    fn inner_at(&self, rhs: &Rhs<'_>, y: &Trajectory, i: usize) -> Result<DVector<f64>> {
        let nodes = self.grid.nodes();
        let ti = nodes[i].t;
        let mut acc = DVector::zeros(rhs.n);
        let mut hv = DVector::zeros(rhs.n);
        for k in 0..i {
            rhs.h_into(ti, nodes[k].t, y.values()[k].as_slice(), &mut hv)?;
            acc.axpy(nodes[k].weight, &hv, 1.0);
        }
        if i > 0 && !nodes[i - 1].is_right_scattered() {
            // only the left half of the last trapezoid lies inside [t_0, t_i]
            rhs.h_into(ti, ti, y.values()[i].as_slice(), &mut hv)?;
            acc.axpy(0.5 * (ti - nodes[i - 1].t), &hv, 1.0);
        }
        Ok(acc)
    }

    /// `z(t_i) = ∫_{t_0}^{t_i} H(t_i, τ, y(τ)) Δτ`.
    pub fn inner_integral(&self, y: &Trajectory, i: usize) -> Result<DVector<f64>> {
        self.check(y)?;
        if i >= self.grid.len() {
            return Err(Error::BadParams(format!("node index {i} out of range")));
        }
        self.inner_at(&self.rhs(), y, i)
    }

    /// `z` at every node.
    pub fn inner(&self, y: &Trajectory) -> Result<Trajectory> {
        self.check(y)?;
        let rhs = self.rhs();
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|i| self.inner_at(&rhs, y, i))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(self.trajectory(values))
    }

    fn forcing(&self, y: &[DVector<f64>], z: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let rhs = self.rhs();
        self.grid
            .nodes()
            .par_iter()
            .enumerate()
            .map(|(k, node)| rhs.f(node.t, y[k].as_slice(), z[k].as_slice()))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }

    fn initial(&self) -> Option<&DVector<f64>> {
        self.with_initial.then_some(&self.spec.y0)
    }

    /// `W(y)` together with the `z` it was built from.
    pub fn apply_w_with_z(&self, y: &Trajectory) -> Result<(Trajectory, Trajectory)> {
        let z = self.inner(y)?;
        let g = self.forcing(y.values(), z.values())?;
        let w = self.kernel.convolve(&g, self.initial(), self.spec.dim());
        Ok((self.trajectory(w), z))
    }

    pub fn apply_w(&self, y: &Trajectory) -> Result<Trajectory> {
        Ok(self.apply_w_with_z(y)?.0)
    }

    /// `(W₁(y), W₂(y))`: `W₁` replaces `y` by `0` inside `F` and `H`, `W₂`
    /// integrates the difference.
    pub fn split_w(&self, y: &Trajectory) -> Result<(Trajectory, Trajectory)> {
        self.check(y)?;
        let zero = GridFunction::constant(self.grid.clone(), &DVector::zeros(self.spec.dim()));
        let z0 = self.inner(&zero)?;
        let g0 = self.forcing(zero.values(), z0.values())?;
        let z = self.inner(y)?;
        let g = self.forcing(y.values(), z.values())?;
        let diff: Vec<_> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
        let n = self.spec.dim();
        let w1 = self.kernel.convolve(&g0, self.initial(), n);
        let w2 = self.kernel.convolve(&diff, None, n);
        Ok((self.trajectory(w1), self.trajectory(w2)))
    }

    /// Iterates `y ← W(y)` from `guess` until `‖W(y) − y‖_sup ≤ tol` and
    /// accepts that `y`.
    pub fn iterate(&self, guess: Trajectory) -> Result<FixedPoint> {
        self.check(&guess)?;
        let mut y = guess;
        let mut step_norms = Vec::new();
        for iterations in 0..self.spec.max_iter {
            let (w, z) = self.apply_w_with_z(&y)?;
            let step = w.sup_distance(&y);
            step_norms.push(step);
            if !step.is_finite() {
                break;
            }
            if step <= self.spec.tol {
                return Ok(FixedPoint { trajectory: y, z, iterations, step_norms, residual: step });
            }
            y = w;
        }
        Err(Error::NoConvergence { step_norms })
    }
}

// ---------------------------------------------------------------------------
// sampled constants

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// A point of the closed ball of `radius` in `R^n`.
fn ball(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let norm = v.norm();
        if norm <= 1.0 {
            return v * radius;
        }
        if n > 6 {
            return v * (radius * rng.gen::<f64>().powf(1.0 / n as f64) / norm);
        }
    }
}

/// A unit coordinate vector or a random direction of norm at most one.
fn direction(rng: &mut ChaCha8Rng, n: usize, axis: bool) -> DVector<f64> {
    if axis {
        let mut v = DVector::zeros(n);
        v[rng.gen_range(0..n)] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        v
    } else {
        ball(rng, n, 1.0)
    }
}

/// Relative size of the perturbation used for local difference quotients.
const LOCAL_STEP: f64 = 1e-4;

fn lipschitz_f_on(rhs: &Rhs<'_>, grid: &TimeGrid, samples: usize, radius: f64, seed: u64) -> Result<f64> {
    let n = rhs.n;
    let mut r = rng(seed, 1);
    let delta = LOCAL_STEP * radius.max(1.0);
    let mut best: f64 = 0.0;
    for i in 0..samples {
        let s = grid.t(r.gen_range(0..grid.len()));
        let x1 = ball(&mut r, n, radius);
        let z1 = ball(&mut r, n, radius);
        let (x2, z2) = match i % 4 {
            0 => (ball(&mut r, n, radius), ball(&mut r, n, radius)),
            1 => (&x1 + direction(&mut r, n, false) * delta, &z1 + direction(&mut r, n, false) * delta),
            2 => (&x1 + direction(&mut r, n, true) * delta, z1.clone()),
            _ => (x1.clone(), &z1 + direction(&mut r, n, true) * delta),
        };
        let d = (&x1 - &x2).norm() + (&z1 - &z2).norm();
        if d == 0.0 {
            continue;
        }
        let f1 = rhs.f(s, x1.as_slice(), z1.as_slice())?;
        let f2 = rhs.f(s, x2.as_slice(), z2.as_slice())?;
        best = best.max((f1 - f2).norm() / d);
    }
    Ok(best)
}

fn lipschitz_h_on(rhs: &Rhs<'_>, grid: &TimeGrid, samples: usize, radius: f64, seed: u64) -> Result<f64> {
    let n = rhs.n;
    let mut r = rng(seed, 2);
    let delta = LOCAL_STEP * radius.max(1.0);
    let mut best: f64 = 0.0;
    let (mut h1, mut h2) = (DVector::zeros(n), DVector::zeros(n));
    for i in 0..samples {
        let a = r.gen_range(0..grid.len());
        let b = r.gen_range(0..grid.len());
        let (s, t) = (grid.t(a.max(b)), grid.t(a.min(b)));
        let y1 = ball(&mut r, n, radius);
        let y2 = match i % 3 {
            0 => ball(&mut r, n, radius),
            1 => &y1 + direction(&mut r, n, false) * delta,
            _ => &y1 + direction(&mut r, n, true) * delta,
        };
        let d = (&y1 - &y2).norm();
        if d == 0.0 {
            continue;
        }
        rhs.h_into(s, t, y1.as_slice(), &mut h1)?;
        rhs.h_into(s, t, y2.as_slice(), &mut h2)?;
        best = best.max((&h1 - &h2).norm() / d);
    }
    Ok(best)
}

fn mf_on(rhs: &Rhs<'_>, grid: &TimeGrid, samples: usize, radius: f64, seed: u64) -> Result<f64> {
    let n = rhs.n;
    let mut r = rng(seed, 3);
    let zero = vec![0.0; n];
    let mut best: f64 = 0.0;
    for i in 0..samples {
        let s = grid.t(r.gen_range(0..grid.len()));
        let psi = if i == 0 { DVector::zeros(n) } else { ball(&mut r, n, radius) };
        best = best.max(rhs.f(s, &zero, psi.as_slice())?.norm());
    }
    Ok(best)
}

fn check_radius(radius: f64, samples: usize) -> Result<()> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::BadParams(format!("radius must be a nonnegative number, got {radius}")));
    }
    if samples < 100 {
        return Err(Error::BadParams(format!("samples must be at least 100, got {samples}")));
    }
    Ok(())
}

/// Largest sampled `‖F(s,x₁,z₁) − F(s,x₂,z₂)‖ / (‖x₁ − x₂‖ + ‖z₁ − z₂‖)` over
/// nodes `s` and points of the ball of `radius`. A lower bound on `L_F*`.
pub fn estimate_lipschitz_f(spec: &ProblemSpec, samples: usize, radius: f64) -> Result<f64> {
    check_radius(radius, samples)?;
    let solver = Solver::new(spec)?;
    lipschitz_f_on(&solver.rhs(), &solver.grid, samples, radius, spec.seed)
}

/// Largest sampled `‖H(s,t,y₁) − H(s,t,y₂)‖ / ‖y₁ − y₂‖` over node pairs
/// `t ≤ s`. A lower bound on `L_H*`.
pub fn estimate_lipschitz_h(spec: &ProblemSpec, samples: usize, radius: f64) -> Result<f64> {
    check_radius(radius, samples)?;
    let solver = Solver::new(spec)?;
    lipschitz_h_on(&solver.rhs(), &solver.grid, samples, radius, spec.seed)
}

/// Largest sampled `‖F(s, 0, Ψ)‖` over nodes and `‖Ψ‖ ≤ radius`.
pub fn estimate_mf(spec: &ProblemSpec, samples: usize, radius: f64) -> Result<f64> {
    check_radius(radius, samples)?;
    let solver = Solver::new(spec)?;
    mf_on(&solver.rhs(), &solver.grid, samples, radius, spec.seed)
}

/// Where a Lipschitz constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Provided,
    /// Sampled, so possibly below the true constant.
    SampledLowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisRow {
    pub name: &'static str,
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisResults {
    /// `H1`..`H4` in order. H1/H2 compare the sampled constant (lhs) with the
    /// one in use (rhs); H3 compares the spectral abscissa with 0; H4 is
    /// `M(S − s0) L_F* (1 + L_H* (S − s0))` against 1.
    pub rows: Vec<HypothesisRow>,
    pub lipschitz_f: f64,
    pub lipschitz_f_source: ConstantSource,
    pub sampled_lipschitz_f: f64,
    pub lipschitz_h: f64,
    pub lipschitz_h_source: ConstantSource,
    pub sampled_lipschitz_h: f64,
    /// Stability constant; without a certificate, `max(1, sup ‖T(Δt)‖)` over the window.
    #[serde(rename = "M")]
    pub m: f64,
    pub stability: Option<StabilityCert>,
    /// Sampled `sup ‖F(s, 0, Ψ)‖` over the ball of radius `ball_radius_k`.
    pub m_f: f64,
    pub ball_radius_k: f64,
    /// `M L_F* (1 + L_H* (S − s0))`: the H4 quantity without the window length.
    pub contraction_without_length: f64,
    pub samples: usize,
    pub seed: u64,
}

impl HypothesisResults {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.satisfied)
    }

    pub fn row(&self, name: &str) -> Option<&HypothesisRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// The H4 left-hand side, which is also the theoretical contraction factor.
    pub fn h4_lhs(&self) -> f64 {
        self.row("H4").map_or(f64::NAN, |r| r.lhs)
    }
}

fn window_operator_bound(g: &Generator, grid: &TimeGrid) -> Result<f64> {
    let t0 = grid.s0();
    let mut m: f64 = 1.0;
    for t in grid.times() {
        m = m.max(spectral_norm(&g.evolve(t - t0)?));
    }
    Ok(m)
}

/// Evaluates H1..H4 for `spec`.
pub fn check_hypotheses(spec: &ProblemSpec) -> Result<HypothesisResults> {
    let solver = Solver::new(spec)?;
    let grid = solver.grid.clone();
    let rhs = solver.rhs();
    let abscissa = spec.generator.spectral_abscissa();
    let stability = match estimate_stability(&spec.generator, &grid) {
        Ok(c) => Some(c),
        Err(Error::NotStable { .. }) => None,
        Err(e) => return Err(e),
    };
    let m = match &stability {
        Some(c) => c.m,
        None => window_operator_bound(&spec.generator, &grid).unwrap_or(f64::INFINITY),
    };
    let y0n = spec.y0.norm();
    let (samples, seed) = (spec.samples, spec.seed);
    let r0 = (2.0 * m * y0n).max(1.0);
    let mf0 = mf_on(&rhs, &grid, samples, r0, seed)?;
    let k0 = 2.0 * m * (y0n + mf0);
    let m_f = mf_on(&rhs, &grid, samples, k0.max(r0), seed)?;
    let k = 2.0 * m * (y0n + m_f);
    let radius = if k.is_finite() { k.max(1.0) } else { r0 };
    let sampled_f = lipschitz_f_on(&rhs, &grid, samples, radius, seed)?;
    let sampled_h = lipschitz_h_on(&rhs, &grid, samples, radius, seed)?;

    let pick = |given: Option<f64>, sampled: f64| match given {
        Some(v) => (v, ConstantSource::Provided),
        None => (sampled, ConstantSource::SampledLowerBound),
    };
    let (lf, lf_source) = pick(spec.lipschitz_f, sampled_f);
    let (lh, lh_source) = pick(spec.lipschitz_h, sampled_h);
    let bounded = |sampled: f64, used: f64| sampled <= used * (1.0 + GRONWALL_TOL) + 1e-12;
    let len = spec.end() - spec.s0();
    let h4 = m * len * lf * (1.0 + lh * len);
    let rows = vec![
        HypothesisRow { name: "H1", satisfied: bounded(sampled_f, lf), lhs: sampled_f, rhs: lf },
        HypothesisRow { name: "H2", satisfied: bounded(sampled_h, lh), lhs: sampled_h, rhs: lh },
        HypothesisRow { name: "H3", satisfied: stability.is_some(), lhs: abscissa, rhs: 0.0 },
        HypothesisRow { name: "H4", satisfied: h4 < 1.0, lhs: h4, rhs: 1.0 },
    ];
    Ok(HypothesisResults {
        rows,
        lipschitz_f: lf,
        lipschitz_f_source: lf_source,
        sampled_lipschitz_f: sampled_f,
        lipschitz_h: lh,
        lipschitz_h_source: lh_source,
        sampled_lipschitz_h: sampled_h,
        m,
        stability,
        m_f,
        ball_radius_k: k,
        contraction_without_length: m * lf * (1.0 + lh * len),
        samples,
        seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverReport {
    #[serde(skip)]
    pub trajectory: Trajectory,
    #[serde(skip)]
    pub z: Trajectory,
    pub iterations: usize,
    pub step_norms: Vec<f64>,
    pub contraction_ratio_observed: f64,
    pub contraction_ratio_theoretical: f64,
    pub hypothesis_results: HypothesisResults,
    pub residual: f64,
    pub ball_radius_k: f64,
}

impl SolverReport {
    pub fn new(fixed_point: FixedPoint, hypotheses: HypothesisResults) -> Self {
        let scale = fixed_point.trajectory.sup_norm().max(1.0);
        SolverReport {
            contraction_ratio_observed: observed_ratio(&fixed_point.step_norms, scale),
            contraction_ratio_theoretical: hypotheses.h4_lhs(),
            ball_radius_k: hypotheses.ball_radius_k,
            hypothesis_results: hypotheses,
            iterations: fixed_point.iterations,
            step_norms: fixed_point.step_norms,
            residual: fixed_point.residual,
            trajectory: fixed_point.trajectory,
            z: fixed_point.z,
        }
    }
}

/// `max_k step[k+1] / step[k]`, ignoring steps at round-off level.
pub fn observed_ratio(step_norms: &[f64], scale: f64) -> f64 {
    step_norms
        .windows(2)
        .filter(|w| w[0] > RATIO_FLOOR * scale && w[1] > RATIO_FLOOR * scale)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max)
}

/// Checks the hypotheses, then iterates from `y ≡ y0`.
pub fn picard_solve(spec: &ProblemSpec) -> Result<SolverReport> {
    let hypotheses = check_hypotheses(spec)?;
    let solver = Solver::new(spec)?;
    let fixed_point = solver.iterate(solver.constant_guess())?;
    Ok(SolverReport::new(fixed_point, hypotheses))
}

/// `z(t) = ∫_{s0}^{t} H(t, τ, y(τ)) Δτ` at node `t`.
pub fn inner_integral(spec: &ProblemSpec, y: &Trajectory, t: f64) -> Result<DVector<f64>> {
    let solver = Solver::new(spec)?;
    let i = solver.grid.index_of(t)?;
    solver.inner_integral(y, i)
}

pub fn apply_w(spec: &ProblemSpec, y: &Trajectory) -> Result<Trajectory> {
    Solver::new(spec)?.apply_w(y)
}

pub fn split_w(spec: &ProblemSpec, y: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    Solver::new(spec)?.split_w(y)
}

/// Largest sup-distance between the fixed points reached from `guesses`.
pub fn uniqueness_probe(spec: &ProblemSpec, guesses: &[Trajectory]) -> Result<f64> {
    let solver = Solver::new(spec)?;
    let points = guesses
        .iter()
        .map(|g| solver.iterate(g.clone()).map(|fp| fp.trajectory))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            worst = worst.max(a.sup_distance(b));
        }
    }
    Ok(worst)
}

/// Pointwise Δ-derivative residual `ŷ^Δ − Aŷ − F(s, ŷ, z)` of a fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub residual: f64,
    pub right_scattered: bool,
}

/// Max-norm of `ŷ^Δ(t) − Aŷ(t) − F(t, ŷ(t), z(t))` at every node but the last.
pub fn differential_residual(spec: &ProblemSpec, fixed_point: &FixedPoint) -> Result<Vec<ResidualPoint>> {
    let solver = Solver::new(spec)?;
    solver.check(&fixed_point.trajectory)?;
    let rhs = solver.rhs();
    let nodes = solver.grid.nodes();
    let y = fixed_point.trajectory.values();
    let z = fixed_point.z.values();
    let a = spec.generator.matrix();
    (0..nodes.len().saturating_sub(1))
        .map(|i| {
            let dt = nodes[i + 1].t - nodes[i].t;
            let deriv = (&y[i + 1] - &y[i]) / dt;
            let r = deriv - a * &y[i] - rhs.f(nodes[i].t, y[i].as_slice(), z[i].as_slice())?;
            Ok(ResidualPoint { t: nodes[i].t, residual: r.amax(), right_scattered: nodes[i].is_right_scattered() })
        })
        .collect()
}

/// Solves at each of `steps` and returns `(steps, sup distance to the finest
/// solution on the coarse nodes)`. The finest is the largest entry.
pub fn grid_convergence(spec: &ProblemSpec, steps: &[usize]) -> Result<Vec<(usize, f64)>> {
    let finest = *steps
        .iter()
        .max()
        .ok_or_else(|| Error::BadParams("no grid resolutions given".into()))?;
    let solve = |d: usize| -> Result<Trajectory> {
        let mut s = spec.clone();
        s.steps_per_unit = d;
        let solver = Solver::new(&s)?;
        Ok(solver.iterate(solver.constant_guess())?.trajectory)
    };
    let reference = solve(finest)?;
    let mut out = Vec::new();
    for &d in steps.iter().filter(|&&d| d != finest) {
        let coarse = solve(d)?;
        let mut worst: f64 = 0.0;
        for (t, v) in coarse.grid().times().zip(coarse.values()) {
            worst = worst.max((v - reference.at(t)?).amax());
        }
        out.push((d, worst));
    }
    Ok(out)
}

/// Truncated form of the whole-line representation
/// `y(s) = ∫_{−∞}^{s} T(s − σ(t)) F(t, y(t), ∫_{−∞}^{t} H Δτ) Δt`.
#[derive(Debug, Clone)]
pub struct TruncatedLine {
    /// Values at the nodes of the extended grid that lie in the original window.
    pub trajectory: Trajectory,
    /// Whole periods added to the left of `s0`.
    pub periods: usize,
    /// Length actually cut off, `periods · period ≥ truncation_T`.
    pub truncation: f64,
    /// `M M_F (1 + μ̃α)/α · e_{⊖α}(s0, s0 − truncation)`.
    pub error_bound: f64,
    pub stability: StabilityCert,
    pub m_f: f64,
    pub iterations: usize,
}

/// Replaces the lower limit `−∞` by `s0 − truncation_T`, rounded out to whole
/// periods of the time scale, and iterates from zero.
pub fn solve_truncated_line(spec: &ProblemSpec, truncation_t: f64) -> Result<TruncatedLine> {
    if !(truncation_t > 0.0 && truncation_t.is_finite()) {
        return Err(Error::BadParams(format!("truncation must be positive, got {truncation_t}")));
    }
    let period = spec.timescale.period().ok_or(Error::NotTranslationInvariant)?;
    let periods = ((truncation_t / period) - 1e-9).ceil().max(1.0) as usize;
    let ext = spec.timescale.extend_left(periods)?;
    let solver = Solver::without_initial(spec, ext.clone())?;
    let grid = solver.grid.clone();
    let stability = estimate_stability(&spec.generator, &grid)?;
    let rhs = solver.rhs();
    let r0 = 1.0;
    let mf0 = mf_on(&rhs, &grid, spec.samples, r0, spec.seed)?;
    let m_f = mf_on(&rhs, &grid, spec.samples, (2.0 * stability.m * mf0).max(r0), spec.seed)?;

    let zero = GridFunction::constant(grid.clone(), &DVector::zeros(spec.dim()));
    let fp = solver.iterate(zero)?;

    let start = ext.s0();
    let alpha = stability.alpha;
    let decay = ext.exp_ominus_closed(alpha, spec.s0(), start)?;
    let error_bound = stability.m * m_f * (1.0 + grid.mu_sup() * alpha) / alpha * decay;

    let from = grid
        .nodes()
        .partition_point(|n| n.t < spec.s0() - crate::timescale::MEMBERSHIP_TOL);
    let tail = Arc::new(grid.tail(from));
    let values = fp.trajectory.values()[from..].to_vec();
    Ok(TruncatedLine {
        trajectory: GridFunction::new(tail, values)?,
        periods,
        truncation: periods as f64 * period,
        error_bound,
        stability,
        m_f,
        iterations: fp.iterations,
    })
}

// ---------------------------------------------------------------------------
// Gronwall-type inequality

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    /// `min_s [f(s) + ∫ₐˢ h (y + ∫ₐᵗ g y) − y(s)]`.
    pub premise_min_slack: f64,
    /// `min_s [f(s)(1 + ∫ₐˢ h(t) e_{h+g}(t, a) Δt) − y(s)]`.
    pub conclusion_a_min_margin: f64,
    /// `min_s [f(s) e_{h+g}(s, a) − y(s)]`.
    pub conclusion_b_min_margin: f64,
    pub conclusion_a_holds: bool,
    pub conclusion_b_holds: bool,
    /// For `f ≡ 0`: whether `y ≡ 0`.
    pub zero_case: Option<bool>,
}

impl GronwallReport {
    pub fn holds(&self) -> bool {
        self.conclusion_a_holds && self.conclusion_b_holds && self.zero_case != Some(false)
    }
}

fn slack(bound: f64, value: f64) -> f64 {
    bound - value + GRONWALL_TOL * bound.abs().max(1.0)
}

/// Checks the premise `y(s) ≤ f(s) + ∫ₐˢ h(t)[y(t) + ∫ₐᵗ g(τ)y(τ) Δτ] Δt` on
/// the nodes `s ≥ a`, then both conclusions.
pub fn gronwall_check(
    y: &GridFunction,
    f: &GridFunction,
    g: &GridFunction,
    h: &GridFunction,
    a: f64,
) -> Result<GronwallReport> {
    for other in [f, g, h] {
        if !y.same_grid(other) {
            return Err(Error::GridMismatch);
        }
    }
    if [y, f, g, h].iter().any(|v| v.dim() != 1) {
        return Err(Error::DimensionMismatch("the inequality is scalar".into()));
    }
    let full = y.grid();
    let ia = full.index_of(a)?;
    let grid = full.tail(ia);
    let take = |v: &GridFunction| v.component(0)[ia..].to_vec();
    let (y, f, g, h) = (take(y), take(f), take(g), take(h));
    let times: Vec<f64> = grid.times().collect();

    for w in f.windows(2).zip(&times[1..]) {
        if w.0[1] < w.0[0] - GRONWALL_TOL * w.0[0].abs().max(1.0) {
            return Err(Error::NotNondecreasing(*w.1));
        }
    }
    if y.iter().chain(&f).chain(&g).chain(&h).any(|&v| !(v >= 0.0)) {
        return Err(Error::BadParams("y, f, g and h must be nonnegative".into()));
    }

    let gy: Vec<f64> = g.iter().zip(&y).map(|(g, y)| g * y).collect();
    let inner = cumulative_integral(&grid, &gy);
    let integrand: Vec<f64> = (0..y.len()).map(|k| h[k] * (y[k] + inner[k])).collect();
    let premise_rhs = cumulative_integral(&grid, &integrand);
    let mut violated = Vec::new();
    let mut premise_min_slack = f64::INFINITY;
    for k in 0..y.len() {
        let bound = f[k] + premise_rhs[k];
        premise_min_slack = premise_min_slack.min(bound - y[k]);
        if slack(bound, y[k]) < 0.0 {
            violated.push(times[k]);
        }
    }
    if !violated.is_empty() {
        return Err(Error::PremiseViolated(violated));
    }

    let p: Vec<f64> = h.iter().zip(&g).map(|(h, g)| h + g).collect();
    let table = ExpTable::new(&grid, &p)?;
    let e: Vec<f64> = (0..y.len()).map(|k| table.between(k, 0)).collect();
    let he: Vec<f64> = h.iter().zip(&e).map(|(h, e)| h * e).collect();
    let he_int = cumulative_integral(&grid, &he);
    let (mut ma, mut mb) = (f64::INFINITY, f64::INFINITY);
    let (mut ok_a, mut ok_b) = (true, true);
    for k in 0..y.len() {
        let ba = f[k] * (1.0 + he_int[k]);
        let bb = f[k] * e[k];
        ma = ma.min(ba - y[k]);
        mb = mb.min(bb - y[k]);
        ok_a &= slack(ba, y[k]) >= 0.0;
        ok_b &= slack(bb, y[k]) >= 0.0;
    }
    let zero_case = f.iter().all(|&v| v == 0.0).then(|| y.iter().all(|&v| v == 0.0));
    Ok(GronwallReport {
        premise_min_slack,
        conclusion_a_min_margin: ma,
        conclusion_b_min_margin: mb,
        conclusion_a_holds: ok_a,
        conclusion_b_holds: ok_b,
        zero_case,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timescale::Family;

    const PAB11: Family = Family::Pab { a: 1.0, b: 1.0 };

    fn ts(family: Family, s0: f64, end: f64) -> TimeScale {
        TimeScale::build(family, s0, end).unwrap()
    }

    fn scalar_spec(a: f64, f: &str, h: &str, scale: TimeScale, d: usize, y0: f64) -> ProblemSpec {
        let g = Generator::from_row_major(1, &[a]).unwrap();
        ProblemSpec::parse(g, &[f], &[h], scale, d, &[y0]).unwrap()
    }

    const EXAMPLE_F: &str = "0.005*sin(1/(2+cos(s)+cos(sqrt(2)*s)))*(sin(x[0])+z[0]) + 1*eominus(1)";
    const EXAMPLE_H: &str = "sin(s)*cos(t)+sin(y[0])+cos(y[0])";

    fn example(d: usize) -> ProblemSpec {
        let mut spec = scalar_spec(-1.0, EXAMPLE_F, EXAMPLE_H, ts(PAB11, 0.0, 3.0), d, 1.0);
        spec.lipschitz_f = Some(0.005);
        spec.lipschitz_h = Some(2.0);
        spec
    }

    fn traj(spec: &ProblemSpec, f: impl FnMut(f64) -> f64) -> Trajectory {
        GridFunction::scalar(spec.grid().unwrap(), f)
    }

    /// Classical fourth-order Runge-Kutta for `u' = rhs(s, u)`.
    fn rk4(rhs: impl Fn(f64, &[f64]) -> Vec<f64>, u0: &[f64], t0: f64, t1: f64, steps: usize) -> Vec<Vec<f64>> {
        let h = (t1 - t0) / steps as f64;
        let axpy = |u: &[f64], k: &[f64], c: f64| -> Vec<f64> { u.iter().zip(k).map(|(a, b)| a + c * b).collect() };
        let mut out = vec![u0.to_vec()];
        let mut u = u0.to_vec();
        for i in 0..steps {
            let t = t0 + i as f64 * h;
            let k1 = rhs(t, &u);
            let k2 = rhs(t + h / 2.0, &axpy(&u, &k1, h / 2.0));
            let k3 = rhs(t + h / 2.0, &axpy(&u, &k2, h / 2.0));
            let k4 = rhs(t + h, &axpy(&u, &k3, h));
            for j in 0..u.len() {
                u[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            out.push(u.clone());
        }
        out
    }

    #[test]
    fn inner_integral_examples() {
        let spec = scalar_spec(-1.0, "0", "0", ts(Family::Reals, 0.0, 2.0), 8, 1.0);
        let y = traj(&spec, |t| t.sin());
        assert_eq!(inner_integral(&spec, &y, 2.0).unwrap()[0], 0.0);

        let spec = scalar_spec(-1.0, "0", "1", ts(Family::Integers, 0.0, 5.0), 1, 1.0);
        let y = traj(&spec, |t| t);
        assert_eq!(inner_integral(&spec, &y, 3.0).unwrap()[0], 3.0);
        assert_eq!(inner_integral(&spec, &y, 0.0).unwrap()[0], 0.0);

        let spec = scalar_spec(-1.0, "0", "y[0]", ts(PAB11, 0.0, 3.0), 4, 1.0);
        let y = traj(&spec, |_| 1.0);
        assert!((inner_integral(&spec, &y, 3.0).unwrap()[0] - 3.0).abs() < 1e-14);
        assert!(matches!(inner_integral(&spec, &y, 1.5), Err(Error::NotANode(_))));
    }

    #[test]
    fn inner_integral_reports_expression_context() {
        let spec = scalar_spec(-1.0, "0", "log(t - 1)", ts(Family::Integers, 0.0, 3.0), 1, 1.0);
        let y = traj(&spec, |_| 0.0);
        match inner_integral(&spec, &y, 3.0) {
            Err(Error::ExprAt { t, tau: Some(tau), .. }) => assert_eq!((t, tau), (3.0, 0.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn apply_w_examples() {
        let spec = scalar_spec(-1.0, "0", "y[0]", ts(Family::Reals, 0.0, 2.0), 8, 2.0);
        let w = apply_w(&spec, &traj(&spec, |t| t.cos())).unwrap();
        for (t, v) in w.grid().times().zip(w.values()) {
            assert!((v[0] - 2.0 * (-t).exp()).abs() < 1e-14, "t = {t}");
        }
        assert_eq!(w.values()[0][0], 2.0);

        let spec = scalar_spec(0.0, "0.75", "y[0]", ts(Family::Reals, 1.0, 3.0), 4, 0.5);
        let w = apply_w(&spec, &traj(&spec, |t| t * t)).unwrap();
        for (t, v) in w.grid().times().zip(w.values()) {
            assert!((v[0] - (0.5 + 0.75 * (t - 1.0))).abs() < 1e-14, "t = {t}");
        }

        let spec = scalar_spec(0.0, "1", "0", ts(Family::Integers, 0.0, 3.0), 1, 0.0);
        let w = apply_w(&spec, &traj(&spec, |_| 5.0)).unwrap();
        assert_eq!(w.component(0), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn apply_w_on_integers_is_a_discrete_variation_of_constants() {
        // on Z with A = a: W(y)(s) = e^{a s} y0 + Σ_{t<s} e^{a(s-t-1)} F(t)
        let spec = scalar_spec(-0.5, "cos(s) + 0.1*x[0]", "0", ts(Family::Integers, 0.0, 6.0), 1, 1.5);
        let y = traj(&spec, |t| t.sqrt());
        let w = apply_w(&spec, &y).unwrap();
        for s in 0..=6 {
            let s = s as f64;
            let mut want = (-0.5 * s).exp() * 1.5;
            for t in 0..(s as usize) {
                let t = t as f64;
                want += (-0.5 * (s - t - 1.0)).exp() * (t.cos() + 0.1 * t.sqrt());
            }
            assert!((w.at(s).unwrap()[0] - want).abs() < 1e-13, "s = {s}");
        }
    }

    #[test]
    fn split_w_examples() {
        let spec = example(16);
        let zero = traj(&spec, |_| 0.0);
        let (_, w2) = split_w(&spec, &zero).unwrap();
        assert_eq!(w2.sup_norm(), 0.0);

        let y = traj(&spec, |t| (3.0 * t).sin() + 0.5);
        let (w1, w2) = split_w(&spec, &y).unwrap();
        let w = apply_w(&spec, &y).unwrap();
        for ((a, b), c) in w1.values().iter().zip(w2.values()).zip(w.values()) {
            assert!((a + b - c).amax() <= 1e-12);
        }

        let spec = scalar_spec(-1.0, "2*x[0] - z[0] + s", "y[0] * t", ts(PAB11, 0.0, 3.0), 4, 1.0);
        let (a, _) = split_w(&spec, &traj(&spec, |t| t)).unwrap();
        let (b, _) = split_w(&spec, &traj(&spec, |t| -t * t)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn homogeneous_problem_converges_after_one_step() {
        let spec = scalar_spec(-1.0, "0", "0", ts(Family::Reals, 0.0, 1.0), 16, 1.0);
        let report = picard_solve(&spec).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.residual, 0.0);
        for (t, v) in report.trajectory.grid().times().zip(report.trajectory.values()) {
            assert!((v[0] - (-t).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn example_converges_within_the_theoretical_ratio() {
        let report = picard_solve(&example(16)).unwrap();
        let hyp = &report.hypothesis_results;
        assert!(hyp.all_satisfied(), "{hyp:?}");
        assert_eq!(hyp.m, 1.0);
        assert!((hyp.h4_lhs() - 1.0 * 3.0 * 0.005 * 7.0).abs() < 1e-15);
        assert!((hyp.contraction_without_length - 0.005 * 7.0).abs() < 1e-15);
        assert!(report.residual <= 1e-8);
        assert!(report.contraction_ratio_observed <= report.contraction_ratio_theoretical + 0.05);
        assert!(report.iterations < 20);
        assert_eq!(report.step_norms.len(), report.iterations + 1);
    }

    #[test]
    fn example_halved_grid_is_self_consistent() {
        let coarse = picard_solve(&example(16)).unwrap().trajectory;
        let fine = picard_solve(&example(32)).unwrap().trajectory;
        let mut worst: f64 = 0.0;
        for (t, v) in coarse.grid().times().zip(coarse.values()) {
            worst = worst.max((v - fine.at(t).unwrap()).amax());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn linear_problem_on_reals_matches_rk4() {
        // H does not depend on s, so z' = y and the system is an ODE in (y, z)
        let spec = scalar_spec(-1.0, "0.5*x[0] + 0.1*z[0] + cos(s)", "y[0]", ts(Family::Reals, 0.0, 2.0), 64, 1.0);
        let solver = Solver::new(&spec).unwrap();
        let fp = solver.iterate(solver.constant_guess()).unwrap();
        let oracle = rk4(|s, u| vec![-0.5 * u[0] + 0.1 * u[1] + s.cos(), u[0]], &[1.0, 0.0], 0.0, 2.0, 128 * 20);
        for (i, v) in fp.trajectory.values().iter().enumerate() {
            let o = &oracle[i * 20];
            assert!((v[0] - o[0]).abs() <= 1e-4, "node {i}");
            assert!((fp.z.values()[i][0] - o[1]).abs() <= 1e-4, "node {i}");
        }
    }

    #[test]
    fn lipschitz_estimates() {
        let spec = scalar_spec(-1.0, "x[0]", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        assert!((estimate_lipschitz_f(&spec, 1000, 3.0).unwrap() - 1.0).abs() <= 1e-6);

        let spec = scalar_spec(-1.0, "-0.3*sin(x[0])", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        let small = estimate_lipschitz_f(&spec, 200, 3.0).unwrap();
        let big = estimate_lipschitz_f(&spec, 20_000, 3.0).unwrap();
        assert!(small <= big && big <= 0.3 + 1e-12);
        assert!(big > 0.299, "{big}");

        let spec = scalar_spec(-1.0, "4", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        assert_eq!(estimate_lipschitz_f(&spec, 500, 3.0).unwrap(), 0.0);

        let spec = scalar_spec(-1.0, "0", "sin(y[0]) + cos(y[0]) + s*t", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        let lh = estimate_lipschitz_h(&spec, 10_000, 4.0).unwrap();
        assert!(lh <= 2f64.sqrt() + 1e-9 && lh > 1.41, "{lh}");
    }

    #[test]
    fn mf_estimates() {
        let spec = scalar_spec(-1.0, "0", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        assert_eq!(estimate_mf(&spec, 500, 2.0).unwrap(), 0.0);

        let spec = scalar_spec(-1.0, "sin(z[0])", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        let mf = estimate_mf(&spec, 10_000, 4.0).unwrap();
        assert!(mf <= 1.0 && mf > 0.999, "{mf}");

        // the decaying term dominates at s = s0, the other term is at most 0.005·radius
        let spec = example(8);
        let mf = estimate_mf(&spec, 10_000, 1.0).unwrap();
        assert!((1.0..=1.005).contains(&mf), "{mf}");
    }

    #[test]
    fn hypothesis_examples() {
        let mut spec = scalar_spec(-1.0, "0*x[0]", "y[0]", ts(Family::Reals, 0.0, 2.0), 4, 1.0);
        spec.lipschitz_f = Some(0.0);
        let h = check_hypotheses(&spec).unwrap();
        assert_eq!(h.h4_lhs(), 0.0);
        assert!(h.row("H4").unwrap().satisfied);

        let mut spec = scalar_spec(-1.0, "x[0]", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        spec.lipschitz_f = Some(1.0);
        spec.lipschitz_h = Some(0.0);
        let h = check_hypotheses(&spec).unwrap();
        assert_eq!(h.m, 1.0);
        assert_eq!(h.h4_lhs(), 1.0);
        assert!(!h.row("H4").unwrap().satisfied);
        assert_eq!(h.lipschitz_f_source, ConstantSource::Provided);

        let spec = scalar_spec(0.5, "x[0]", "0", ts(Family::Reals, 0.0, 1.0), 4, 1.0);
        let h = check_hypotheses(&spec).unwrap();
        assert!(!h.row("H3").unwrap().satisfied);
        assert!(h.stability.is_none());
        assert!(h.m > 1.6 && h.m < 1.65, "{}", h.m);
        assert_eq!(h.lipschitz_f_source, ConstantSource::SampledLowerBound);

        let mut spec = example(8);
        spec.lipschitz_f = Some(0.001);
        let h = check_hypotheses(&spec).unwrap();
        assert!(!h.row("H1").unwrap().satisfied, "sampled L_F exceeds the provided one");
    }

    #[test]
    fn huge_lipschitz_constant_fails_h4_but_the_solve_is_attempted() {
        let mut spec = example(8);
        spec.lipschitz_f = Some(100.0);
        let h = check_hypotheses(&spec).unwrap();
        assert!(!h.row("H4").unwrap().satisfied);
        assert!(picard_solve(&spec).is_ok());

        let mut spec = scalar_spec(-1.0, "3*x[0] + 2*z[0]", "exp(y[0])", ts(Family::Reals, 0.0, 3.0), 8, 1.0);
        spec.max_iter = 30;
        assert!(matches!(picard_solve(&spec), Err(Error::NoConvergence { step_norms }) if !step_norms.is_empty()));
    }

    fn grids(scale: TimeScale, d: usize) -> Arc<TimeGrid> {
        Arc::new(scale.make_grid(d).unwrap())
    }

    #[test]
    fn gronwall_trivial_case_holds_with_equality() {
        let g = grids(ts(PAB11, 0.0, 5.0), 4);
        let one = GridFunction::scalar(g.clone(), |_| 1.0);
        let zero = GridFunction::scalar(g, |_| 0.0);
        let r = gronwall_check(&one, &one, &zero, &zero, 0.0).unwrap();
        assert!(r.holds());
        assert_eq!((r.premise_min_slack, r.conclusion_a_min_margin, r.conclusion_b_min_margin), (0.0, 0.0, 0.0));
        assert_eq!(r.zero_case, None);
    }

    #[test]
    fn gronwall_zero_forcing() {
        let g = grids(ts(Family::Integers, 0.0, 8.0), 1);
        let zero = GridFunction::scalar(g.clone(), |_| 0.0);
        let h = GridFunction::scalar(g.clone(), |t| 1.0 + t);
        let r = gronwall_check(&zero, &zero, &h, &h, 0.0).unwrap();
        assert_eq!(r.zero_case, Some(true));
        let bump = GridFunction::scalar(g, |t| if t == 3.0 { 1e-3 } else { 0.0 });
        assert!(matches!(gronwall_check(&bump, &zero, &h, &h, 0.0), Err(Error::PremiseViolated(v)) if v == vec![3.0]));
    }

    #[test]
    fn gronwall_saturating_sequence_on_integers() {
        let g = grids(ts(Family::Integers, 0.0, 12.0), 1);
        let y = GridFunction::scalar(g.clone(), |t| 2f64.powf(t));
        let one = GridFunction::scalar(g.clone(), |_| 1.0);
        let zero = GridFunction::scalar(g, |_| 0.0);
        let r = gronwall_check(&y, &one, &zero, &one, 0.0).unwrap();
        assert!(r.holds());
        assert!(r.premise_min_slack.abs() < 1e-9);
        assert!(r.conclusion_b_min_margin.abs() < 1e-9 * 4096.0);
    }

    #[test]
    fn gronwall_on_pab_with_an_euler_sequence() {
        let g = grids(ts(PAB11, 0.0, 7.0), 8);
        let (hc, gc) = (0.7, 0.2);
        let nodes = g.nodes();
        let mut y = vec![1.5];
        for i in 0..nodes.len() - 1 {
            let dt = nodes[i + 1].t - nodes[i].t;
            let last = y[i];
            y.push(last * (1.0 + hc * dt));
        }
        let y = GridFunction::from_scalars(g.clone(), &y).unwrap();
        let f = GridFunction::scalar(g.clone(), |_| 1.5);
        let h = GridFunction::scalar(g.clone(), |_| hc);
        let gg = GridFunction::scalar(g.clone(), |_| gc);
        let r = gronwall_check(&y, &f, &gg, &h, 0.0).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(r.premise_min_slack >= 0.0);

        // starting later uses only the tail
        let r = gronwall_check(&y, &y, &gg, &h, 2.0);
        assert!(r.is_ok());
    }

    #[test]
    fn gronwall_rejects_decreasing_f() {
        let g = grids(ts(Family::Integers, 0.0, 4.0), 1);
        let f = GridFunction::scalar(g.clone(), |t| 5.0 - t);
        let zero = GridFunction::scalar(g, |_| 0.0);
        assert!(matches!(gronwall_check(&zero, &f, &zero, &zero, 0.0), Err(Error::NotNondecreasing(t)) if t == 1.0));
    }

    #[test]
    fn uniqueness_examples() {
        let spec = example(16);
        let g = spec.grid().unwrap();
        let guesses = [
            GridFunction::scalar(g.clone(), |_| 1.0),
            GridFunction::scalar(g.clone(), |_| 0.0),
            GridFunction::scalar(g.clone(), |_| 2.0),
        ];
        assert!(uniqueness_probe(&spec, &guesses).unwrap() <= 2.0 * spec.tol);

        let spec = scalar_spec(-1.0, "0", "y[0]", ts(PAB11, 0.0, 3.0), 4, 1.0);
        let g = spec.grid().unwrap();
        let guesses = [GridFunction::scalar(g.clone(), |t| t), GridFunction::scalar(g, |t| -t)];
        assert_eq!(uniqueness_probe(&spec, &guesses).unwrap(), 0.0);
    }

    #[test]
    fn truncated_line_examples() {
        let spec = scalar_spec(-1.0, "0", "y[0]", ts(PAB11, 0.0, 4.0), 4, 1.0);
        let line = solve_truncated_line(&spec, 4.0).unwrap();
        assert_eq!(line.trajectory.sup_norm(), 0.0);
        assert_eq!(line.periods, 2);

        let c = 0.7;
        let spec = scalar_spec(-1.0, "0.7", "0", ts(Family::Reals, 0.0, 2.0), 16, 1.0);
        let short = solve_truncated_line(&spec, 3.0).unwrap();
        let long = solve_truncated_line(&spec, 6.0).unwrap();
        assert_eq!(short.trajectory.grid().s0(), 0.0);
        let mut worst: f64 = 0.0;
        for (t, v) in short.trajectory.grid().times().zip(short.trajectory.values()) {
            let closed = c * (1.0 - (-(t + 3.0)).exp());
            assert!((v[0] - closed).abs() < 1e-3, "t = {t}");
            assert!((v[0] - c).abs() <= short.error_bound);
            worst = worst.max((v - long.trajectory.at(t).unwrap()).amax());
        }
        assert!(worst <= short.error_bound, "{worst} > {}", short.error_bound);
        assert!(long.error_bound < short.error_bound);

        let spec = scalar_spec(-1.0, "0", "0", TimeScale::explicit(vec![crate::timescale::Segment::new(0.0, 1.0)], None).unwrap(), 4, 1.0);
        assert!(matches!(solve_truncated_line(&spec, 1.0), Err(Error::NotTranslationInvariant)));
        let spec = scalar_spec(1.0, "0", "0", ts(Family::Reals, 0.0, 2.0), 4, 1.0);
        assert!(matches!(solve_truncated_line(&spec, 1.0), Err(Error::NotStable { .. })));
    }

    #[test]
    fn differential_residual_is_small_on_dense_nodes() {
        let spec = scalar_spec(-1.0, "0.2*sin(x[0]) + 0.1*z[0]", "cos(y[0])", ts(PAB11, 0.0, 3.0), 64, 1.0);
        let solver = Solver::new(&spec).unwrap();
        let fp = solver.iterate(solver.constant_guess()).unwrap();
        let res = differential_residual(&spec, &fp).unwrap();
        let dense = res.iter().filter(|r| !r.right_scattered).map(|r| r.residual).fold(0.0, f64::max);
        assert!(dense < 0.05, "{dense}");
        // across a gap the exponential T(μ) differs from the Δ-exponential 1 + μA
        let gap = res.iter().find(|r| r.right_scattered).unwrap();
        let y = fp.trajectory.at(gap.t).unwrap()[0];
        let want = (-1f64).exp() * y;
        assert!((gap.residual - want.abs()).abs() < 4.0 * spec.tol, "{} vs {}", gap.residual, want);
    }

    #[test]
    fn grid_convergence_on_reals_is_second_order() {
        let spec = scalar_spec(-1.0, "0.2*sin(x[0]) + 0.1*z[0]", "cos(y[0])", ts(Family::Reals, 0.0, 2.0), 8, 1.0);
        let diffs = grid_convergence(&spec, &[8, 16, 32, 256]).unwrap();
        let r1 = diffs[1].1 / diffs[0].1;
        let r2 = diffs[2].1 / diffs[1].1;
        assert!((0.2..0.3).contains(&r1) && (0.2..0.3).contains(&r2), "{diffs:?}");
    }

    #[test]
    fn kernel_reuse_is_bit_deterministic() {
        let spec = example(16);
        let a = picard_solve(&spec).unwrap();
        let b = picard_solve(&spec).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.step_norms, b.step_norms);
        assert_eq!(a.hypothesis_results, b.hypothesis_results);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_spec(a: f64, c: [f64; 4], family: u8) -> ProblemSpec {
            let f = format!("{}*sin(x[0]) + {}*z[0] + {}*cos(s)", c[0], c[1], c[2]);
            let h = format!("{}*y[0]*cos(t) + sin(s - t)", c[3]);
            let scale = match family {
                0 => ts(Family::Reals, 0.0, 2.0),
                1 => ts(Family::Integers, 0.0, 6.0),
                _ => ts(PAB11, 0.0, 3.0),
            };
            scalar_spec(a, &f, &h, scale, 6, 0.8)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn split_identity(a in -2.0f64..0.0, c in prop::array::uniform4(-1.0f64..1.0), fam in 0u8..3, w in 0.5f64..3.0) {
                let spec = random_spec(a, c, fam);
                let y = traj(&spec, |t| (w * t).sin());
                let (w1, w2) = split_w(&spec, &y).unwrap();
                let full = apply_w(&spec, &y).unwrap();
                for ((p, q), r) in w1.values().iter().zip(w2.values()).zip(full.values()) {
                    prop_assert!((p + q - r).amax() <= 1e-12);
                }
            }

            #[test]
            fn contraction_and_ball_invariance_under_h4(a in -2.0f64..-0.2, c in prop::array::uniform4(-0.05f64..0.05), fam in 0u8..3, w in 0.5f64..3.0) {
                let mut spec = random_spec(a, c, fam);
                let len = spec.end() - spec.s0();
                spec.lipschitz_f = Some(c[0].abs() + c[1].abs());
                spec.lipschitz_h = Some(c[3].abs());
                spec.samples = 500;
                let report = picard_solve(&spec).unwrap();
                let hyp = &report.hypothesis_results;
                prop_assume!(hyp.all_satisfied());
                prop_assert!(report.contraction_ratio_observed <= report.contraction_ratio_theoretical + 0.05);
                prop_assert!(report.residual <= spec.tol);
                let k = report.ball_radius_k;
                prop_assert!(k.is_finite() && len > 0.0);
                let probe = traj(&spec, |t| k * (w * t).cos());
                prop_assert!(apply_w(&spec, &probe).unwrap().sup_norm() <= k);
            }
        }
    }
}
