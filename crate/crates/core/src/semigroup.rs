//! The evolution family `T(t) = exp(tA)` of a constant generator and its
//! exponential-stability certificate `‖T(t − t0)‖ ≤ M e_{⊖α}(t, t0)`.

use std::collections::HashMap;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calculus::ExpTable;
use crate::error::{Error, Result};
use crate::timescale::TimeGrid;

/// Default back-off applied to the spectral abscissa when choosing α.
pub const DEFAULT_ALPHA_FACTOR: f64 = 0.9;

const SPECTRAL_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    matrix: DMatrix<f64>,
}

impl Generator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "generator must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParams("generator has non-finite entries".into()));
        }
        Ok(Generator { matrix })
    }

    /// Builds an `n×n` generator from row-major entries.
    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for n = {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max Re λ(A)`.
    pub fn spectral_abscissa(&self) -> f64 {
        self.matrix
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `T(dt) = exp(dt·A)`.
    pub fn evolve(&self, dt: f64) -> Result<DMatrix<f64>> {
        if !(dt >= 0.0) {
            return Err(Error::BadParams(format!("dt must be nonnegative, got {dt}")));
        }
        let out = expm(&(&self.matrix * dt));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { dt });
        }
        Ok(out)
    }
}

// Padé coefficients b_0..b_m for m = 3, 5, 7, 9, 13.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norms for which each degree meets double-precision backward error.
const THETA: [(f64, &[f64]); 4] = [
    (1.495585217958292e-2, &PADE3),
    (2.53939833006323e-1, &PADE5),
    (9.504178996162932e-1, &PADE7),
    (2.097847961257068e0, &PADE9),
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a diagonal Padé
/// approximant (degree 3 to 13 chosen from the 1-norm).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return ident;
    }
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    for (theta, coeffs) in THETA {
        if norm <= theta {
            return pade(a, coeffs);
        }
    }
    let squarings = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = a / 2f64.powi(squarings);
    let mut r = pade(&scaled, &PADE13);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn pade(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let m = b.len() - 1;
    // even powers A^0, A^2, A^4, ...
    let mut powers = vec![ident.clone(), a2.clone()];
    while 2 * (powers.len() - 1) < m - 1 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut odd = DMatrix::zeros(n, n);
    let mut even = DMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k < m {
            odd += p * b[2 * k + 1];
        }
        if 2 * k <= m {
            even += p * b[2 * k];
        }
    }
    let u = a * odd;
    let num = &even + &u;
    let den = &even - &u;
    den.lu().solve(&num).unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN))
}

/// Spectral norm by power iteration on `MᵀM`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 1 && m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    let gram = m.transpose() * m;
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let w = &gram * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        v = w / wn;
        if (next - estimate).abs() <= SPECTRAL_NORM_TOL * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    // one more Rayleigh quotient from the converged direction
    let w = &gram * &v;
    estimate.max(v.dot(&w)).max(0.0).sqrt()
}

/// Frobenius norm, for cheap residuals.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Memoized `T(dt)`, keyed by the exact bits of `dt`.
#[derive(Debug)]
pub struct EvolutionCache<'a> {
    generator: &'a Generator,
    cache: RwLock<HashMap<u64, DMatrix<f64>>>,
}

impl<'a> EvolutionCache<'a> {
    pub fn new(generator: &'a Generator) -> Self {
        EvolutionCache { generator, cache: RwLock::new(HashMap::new()) }
    }

    pub fn get(&self, dt: f64) -> Result<DMatrix<f64>> {
        let key = dt.to_bits();
        if let Some(m) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let m = self.generator.evolve(dt)?;
        self.cache
            .write()
            .expect("cache poisoned")
            .insert(key, m.clone());
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCert {
    #[serde(rename = "M")]
    pub m: f64,
    pub alpha: f64,
    pub spectral_abscissa: f64,
    /// Number of grid nodes the certificate was computed on.
    pub verified_on_nodes: usize,
    pub max_violation: f64,
}

/// Time differences are bucketed at this resolution so that repeated
/// differences on uniform grids share one matrix exponential.
const DT_QUANTUM: f64 = 1e-12;

fn operator_norms(g: &Generator, grid: &TimeGrid) -> Result<HashMap<i64, f64>> {
    let times: Vec<f64> = grid.times().collect();
    let mut norms = HashMap::new();
    for (j, &tj) in times.iter().enumerate() {
        for &ti in &times[..=j] {
            let key = ((tj - ti) / DT_QUANTUM).round() as i64;
            if let std::collections::hash_map::Entry::Vacant(e) = norms.entry(key) {
                e.insert(spectral_norm(&g.evolve(key as f64 * DT_QUANTUM)?));
            }
        }
    }
    Ok(norms)
}

/// Chooses `α = factor·(−max Re λ)` and the smallest `M ≥ 1` making the
/// stability bound hold on every node pair of `grid`.
pub fn estimate_stability(g: &Generator, grid: &TimeGrid) -> Result<StabilityCert> {
    estimate_stability_with(g, grid, DEFAULT_ALPHA_FACTOR)
}

pub fn estimate_stability_with(g: &Generator, grid: &TimeGrid, factor: f64) -> Result<StabilityCert> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::BadParams(format!("alpha factor must lie in (0, 1), got {factor}")));
    }
    let abscissa = g.spectral_abscissa();
    if abscissa >= 0.0 {
        return Err(Error::NotStable { abscissa });
    }
    let alpha = -factor * abscissa;
    let table = ExpTable::ominus(grid, alpha)?;
    let norms = operator_norms(g, grid)?;
    let times: Vec<f64> = grid.times().collect();
    let mut m: f64 = 1.0;
    for (j, &tj) in times.iter().enumerate() {
        for (i, &ti) in times[..=j].iter().enumerate() {
            let key = ((tj - ti) / DT_QUANTUM).round() as i64;
            m = m.max(norms[&key] / table.between(j, i));
        }
    }
    Ok(StabilityCert {
        m,
        alpha,
        spectral_abscissa: abscissa,
        verified_on_nodes: grid.len(),
        max_violation: 0.0,
    })
}

impl StabilityCert {
    /// Largest `‖T(t − t0)‖ − M e_{⊖α}(t, t0)` over node pairs of `grid`.
    pub fn violation_on(&self, g: &Generator, grid: &TimeGrid) -> Result<f64> {
        let table = ExpTable::ominus(grid, self.alpha)?;
        let norms = operator_norms(g, grid)?;
        let times: Vec<f64> = grid.times().collect();
        let mut worst = f64::NEG_INFINITY;
        for (j, &tj) in times.iter().enumerate() {
            for (i, &ti) in times[..=j].iter().enumerate() {
                let key = ((tj - ti) / DT_QUANTUM).round() as i64;
                worst = worst.max(norms[&key] - self.m * table.between(j, i));
            }
        }
        Ok(worst)
    }
}
