//! Finite-window diagnostics for almost automorphic (AA), asymptotically
//! almost automorphic (AAA) and bi-almost automorphic behaviour.
//!
//! None of these can be decided from finitely many samples. Each diagnostic
//! compares copies shifted along `τ_n = n·period`, with `τ_0 = 0`, and turns
//! the size of the differences into a verdict through fixed thresholds.

use nalgebra::DVector;
use serde::Serialize;

use crate::calculus::GridFunction;
use crate::error::{Error, Result};
use crate::expr::{Args, VectorExpr};
use crate::solver::ScaleContext;
use crate::timescale::{TimeGrid, TimeScale, MEMBERSHIP_TOL};

/// Largest Cauchy gap still read as AA.
pub const CONSISTENT_THRESHOLD: f64 = 1e-6;
/// Smallest Cauchy gap read as a violation.
pub const VIOLATION_THRESHOLD: f64 = 1e-2;
/// The last AAA tail window must fall below this.
pub const DECAY_THRESHOLD: f64 = 1e-3;
/// Allowed growth between consecutive AAA tail windows.
pub const DECAY_SLACK: f64 = 1.1;

/// Largest number of nodes per axis sampled by [`bi_aa_diagnose`].
const MAX_AXIS_SAMPLES: usize = 200;

pub const HEURISTIC_NOTE: &str = "heuristic, finite-window";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    ConsistentWithAA,
    Inconclusive,
    ViolatesAA,
}

impl Verdict {
    fn from_profile(profile: &[f64]) -> Self {
        let worst = profile.iter().copied().fold(0.0, f64::max);
        if profile.iter().any(|v| v.is_nan()) || worst > VIOLATION_THRESHOLD {
            Verdict::ViolatesAA
        } else if worst <= CONSISTENT_THRESHOLD {
            Verdict::ConsistentWithAA
        } else {
            Verdict::Inconclusive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AADiagnostic {
    pub shifts_used: Vec<f64>,
    /// `sup_s ‖f(s + τ_{N−1}) − f̄(s)‖` with `f̄ = f(· + τ_N)`.
    pub forward_error: f64,
    /// `sup_s ‖f̄(s − τ_1) − f(s)‖`.
    pub backward_error: f64,
    /// `c_n = sup_s ‖f(s + τ_{n+1}) − f(s + τ_n)‖`, `n = 0..N`.
    pub cauchy_profile: Vec<f64>,
    pub verdict: Verdict,
    pub note: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AAADiagnostic {
    /// `(window start, sup of ‖f − principal‖ over the window)`.
    pub tail_sup: Vec<(f64, f64)>,
    pub decay_consistent: bool,
    pub note: &'static str,
}

fn shifts(ts: &TimeScale, num_shifts: usize) -> Result<(f64, Vec<f64>)> {
    let period = ts.period().ok_or(Error::NotTranslationInvariant)?;
    let available = ts.translation_set()?;
    if num_shifts < 3 || available.len() < num_shifts {
        return Err(Error::WindowTooShort(format!(
            "{num_shifts} shifts requested (at least 3 needed), the window holds {} of period {period}",
            available.len()
        )));
    }
    Ok((period, available[..num_shifts].to_vec()))
}

/// Value at time `t`: a node value, or the linear interpolant on a continuous
/// stretch between two nodes.
fn value_at(f: &GridFunction, t: f64) -> Result<DVector<f64>> {
    let grid = f.grid();
    if let Ok(i) = grid.index_of(t) {
        return Ok(f.values()[i].clone());
    }
    let nodes = grid.nodes();
    let i = nodes.partition_point(|n| n.t < t);
    if i == 0 || i >= nodes.len() || nodes[i - 1].is_right_scattered() {
        return Err(Error::NotInTimeScale(t));
    }
    let (a, b) = (&nodes[i - 1], &nodes[i]);
    let w = (t - a.t) / (b.t - a.t);
    Ok(&f.values()[i - 1] * (1.0 - w) + &f.values()[i] * w)
}

fn in_window(grid: &TimeGrid, lo: f64, hi: f64) -> Vec<f64> {
    grid.times()
        .filter(|&t| t >= lo - MEMBERSHIP_TOL && t <= hi + MEMBERSHIP_TOL)
        .collect()
}

/// `sup_s ‖f(s + a) − f(s + b)‖` over nodes `s` with `s + max(a, b) ≤ end`.
fn sup_gap(f: &GridFunction, a: f64, b: f64, lo: f64, end: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in in_window(f.grid(), lo, end - a.max(b)) {
        let d = (value_at(f, s + a)? - value_at(f, s + b)?).amax();
        worst = if d.is_nan() { f64::NAN } else { worst.max(d) };
    }
    Ok(worst)
}

/// AA diagnostic of `f` along the first `num_shifts` periods of `ts`.
pub fn aa_diagnose(f: &GridFunction, ts: &TimeScale, num_shifts: usize) -> Result<AADiagnostic> {
    let (_, taus) = shifts(ts, num_shifts)?;
    let (s0, end) = (f.grid().s0(), f.grid().end());
    if taus[num_shifts - 1] > end - s0 + MEMBERSHIP_TOL {
        return Err(Error::WindowTooShort(format!("samples cover [{s0}, {end}] only")));
    }
    let mut previous = 0.0;
    let mut cauchy_profile = Vec::with_capacity(taus.len());
    for &tau in &taus {
        cauchy_profile.push(sup_gap(f, tau, previous, s0, end)?);
        previous = tau;
    }
    let last = taus[num_shifts - 1];
    let before = if num_shifts >= 2 { taus[num_shifts - 2] } else { 0.0 };
    let forward_error = sup_gap(f, before, last, s0, end)?;
    // f̄(s − τ_1) = f(s − τ_1 + τ_N) against f(s), written with s' = s − τ_1
    let backward_error = sup_gap(f, last, taus[0], s0, end)?;
    Ok(AADiagnostic {
        shifts_used: taus,
        forward_error,
        backward_error,
        verdict: Verdict::from_profile(&cauchy_profile),
        cauchy_profile,
        note: HEURISTIC_NOTE,
    })
}

/// Sup of `f − principal_estimate` over consecutive windows one period wide.
pub fn aaa_diagnose(f: &GridFunction, ts: &TimeScale, principal_estimate: &GridFunction) -> Result<AAADiagnostic> {
    if !f.same_grid(principal_estimate) || f.dim() != principal_estimate.dim() {
        return Err(Error::GridMismatch);
    }
    let period = ts.period().ok_or(Error::NotTranslationInvariant)?;
    let grid = f.grid();
    let (s0, end) = (grid.s0(), grid.end());
    let mut tail_sup: Vec<(f64, f64)> = Vec::new();
    let mut j = 0usize;
    loop {
        let start = s0 + j as f64 * period;
        if start > end - MEMBERSHIP_TOL && j > 0 {
            break;
        }
        let stop = start + period;
        let sup = grid
            .times()
            .zip(f.values().iter().zip(principal_estimate.values()))
            .filter(|(t, _)| *t >= start - MEMBERSHIP_TOL && *t < stop - MEMBERSHIP_TOL)
            .map(|(_, (a, b))| (a - b).amax())
            .fold(0.0, f64::max);
        tail_sup.push((start, sup));
        j += 1;
    }
    let first = tail_sup[0].1;
    let last = tail_sup[tail_sup.len() - 1].1;
    let monotone = tail_sup.windows(2).all(|w| w[1].1 <= DECAY_SLACK * w[0].1);
    let decay_consistent = tail_sup.len() >= 2 && monotone && last <= 0.5 * first && last < DECAY_THRESHOLD;
    Ok(AAADiagnostic { tail_sup, decay_consistent, note: HEURISTIC_NOTE })
}

/// Bi-AA diagnostic of the kernel `(s, t) ↦ H(s, t, y_sample(t))` under the
/// diagonal shifts `(s, t) → (s + τ_n, t + τ_n)`, with `y_sample` held fixed.
pub fn bi_aa_diagnose(
    hfun: &VectorExpr,
    ts: &TimeScale,
    y_sample: &GridFunction,
    num_shifts: usize,
) -> Result<AADiagnostic> {
    let (_, taus) = shifts(ts, num_shifts)?;
    let grid = y_sample.grid();
    let (s0, end) = (grid.s0(), grid.end());
    let last = taus[num_shifts - 1];
    let axis: Vec<usize> = {
        let idx: Vec<usize> = (0..grid.len())
            .filter(|&i| grid.t(i) <= end - last + MEMBERSHIP_TOL)
            .collect();
        let stride = idx.len().div_ceil(MAX_AXIS_SAMPLES).max(1);
        idx.into_iter().step_by(stride).collect()
    };
    let ctx = ScaleContext { ts, s0 };
    let kernel = |i: usize, j: usize, shift: f64| -> Result<DVector<f64>> {
        let (s, t) = (grid.t(i) + shift, grid.t(j) + shift);
        let y = y_sample.values()[j].as_slice();
        let vectors = [y];
        let scalars = [s, t];
        hfun.eval(&Args::new(&scalars, &vectors).with_context(&ctx))
            .map_err(|source| Error::ExprAt { t: s, tau: Some(t), source })
    };
    let sup_gap = |a: f64, b: f64| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &i in &axis {
            for &j in &axis {
                let d = (kernel(i, j, a)? - kernel(i, j, b)?).amax();
                worst = if d.is_nan() { f64::NAN } else { worst.max(d) };
            }
        }
        Ok(worst)
    };
    let mut previous = 0.0;
    let mut cauchy_profile = Vec::with_capacity(taus.len());
    for &tau in &taus {
        cauchy_profile.push(sup_gap(tau, previous)?);
        previous = tau;
    }
    let before = if num_shifts >= 2 { taus[num_shifts - 2] } else { 0.0 };
    Ok(AADiagnostic {
        forward_error: sup_gap(before, last)?,
        backward_error: sup_gap(last - taus[0], 0.0)?,
        verdict: Verdict::from_profile(&cauchy_profile),
        cauchy_profile,
        shifts_used: taus,
        note: HEURISTIC_NOTE,
    })
}
