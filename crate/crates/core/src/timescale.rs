//! Bounded time scales stored extensionally, and the grids built on them.
//!
//! A [`TimeScale`] is a finite union of closed intervals (possibly degenerate,
//! i.e. isolated points) restricted to a working window `[s0, S]`. The jump
//! operator σ and the graininess μ are read directly off the segment list.
//! [`TimeGrid`] samples the continuous parts uniformly and keeps every segment
//! endpoint, so contributions of right-scattered points are never interpolated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for membership and node lookup.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Reals,
    Integers,
    /// `hℤ`
    #[serde(rename = "hstep")]
    HStep { h: f64 },
    /// `P_{a,b}`: intervals of length `a` separated by gaps of length `b`.
    Pab { a: f64, b: f64 },
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Self {
        Segment { start, end }
    }

    pub fn is_point(&self) -> bool {
        self.end - self.start <= MEMBERSHIP_TOL
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.start - MEMBERSHIP_TOL && t <= self.end + MEMBERSHIP_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeScale {
    segments: Vec<Segment>,
    s0: f64,
    end: f64,
    family: Family,
    period: Option<f64>,
}

impl TimeScale {
    /// Restricts `family` to the window `[s0, end]`.
    ///
    /// The stored `s0`/`end` are the min/max of the resulting point set, which
    /// can differ from the requested window when it starts or stops in a gap.
    pub fn build(family: Family, s0: f64, end: f64) -> Result<Self> {
        if !(s0.is_finite() && end.is_finite()) || s0 >= end {
            return Err(Error::BadParams(format!("need s0 < S, got [{s0}, {end}]")));
        }
        let (segments, period) = match family {
            Family::Reals => (vec![Segment::new(s0, end)], Some(1.0)),
            Family::Integers => (lattice_points(1.0, s0, end), Some(1.0)),
            Family::HStep { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::BadParams(format!("h must be positive, got {h}")));
                }
                (lattice_points(h, s0, end), Some(h))
            }
            Family::Pab { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::BadParams(format!(
                        "P_ab needs a > 0 and b > 0, got a = {a}, b = {b}"
                    )));
                }
                (pab_segments(a, b, s0, end), Some(a + b))
            }
            Family::Explicit => {
                return Err(Error::BadParams(
                    "explicit time scales are built with TimeScale::explicit".into(),
                ))
            }
        };
        Self::from_parts(segments, family, period, s0, end)
    }

    /// An irregular time scale from a user-supplied segment list. A period is
    /// accepted only if it is consistent with the segments on the window.
    pub fn explicit(segments: Vec<Segment>, period: Option<f64>) -> Result<Self> {
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.start.is_finite() && seg.end.is_finite()) || seg.start > seg.end {
                return Err(Error::BadParams(format!("segment {i} is not an interval")));
            }
            if i > 0 && seg.start <= segments[i - 1].end + MEMBERSHIP_TOL {
                return Err(Error::BadParams(format!(
                    "segment {i} overlaps or touches segment {}",
                    i - 1
                )));
            }
        }
        let (Some(first), Some(last)) = (segments.first(), segments.last()) else {
            return Err(Error::BadParams("no segments".into()));
        };
        let (s0, end) = (first.start, last.end);
        let ts = Self::from_parts(segments, Family::Explicit, None, s0, end)?;
        match period {
            Some(p) => ts.with_period(p),
            None => Ok(ts),
        }
    }

    fn from_parts(
        segments: Vec<Segment>,
        family: Family,
        period: Option<f64>,
        s0: f64,
        end: f64,
    ) -> Result<Self> {
        let (Some(first), Some(last)) = (segments.first(), segments.last()) else {
            return Err(Error::EmptyWindow { s0, end });
        };
        Ok(TimeScale {
            s0: first.start,
            end: last.end,
            segments,
            family,
            period,
        })
    }

    /// Replaces the translation period after checking it against the window.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::BadParams(format!("period must be positive, got {period}")));
        }
        if !self.period_consistent(period) {
            return Err(Error::BadParams(format!(
                "period {period} does not map the time scale onto itself"
            )));
        }
        self.period = Some(period);
        Ok(self)
    }

    fn period_consistent(&self, p: f64) -> bool {
        let maps_into = |shift: f64| {
            self.segments.iter().all(|seg| {
                let (a, b) = (seg.start + shift, seg.end + shift);
                if b < self.s0 - MEMBERSHIP_TOL || a > self.end + MEMBERSHIP_TOL {
                    return true;
                }
                let (a, b) = (a.max(self.s0), b.min(self.end));
                self.segments
                    .iter()
                    .any(|s| s.contains(a) && s.contains(b))
            })
        };
        maps_into(p) && maps_into(-p)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    /// Right end `S` of the window.
    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    fn segment_of(&self, t: f64) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.end + MEMBERSHIP_TOL < t);
        (idx < self.segments.len() && self.segments[idx].contains(t)).then_some(idx)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.segment_of(t).is_some()
    }

    /// Forward jump σ(t); σ(S) = S.
    pub fn jump_forward(&self, t: f64) -> Result<f64> {
        let i = self.segment_of(t).ok_or(Error::NotInTimeScale(t))?;
        let seg = self.segments[i];
        if t < seg.end - MEMBERSHIP_TOL {
            return Ok(t);
        }
        Ok(self.segments.get(i + 1).map_or(seg.end, |next| next.start))
    }

    /// Graininess μ(t) = σ(t) − t.
    pub fn graininess(&self, t: f64) -> Result<f64> {
        let i = self.segment_of(t).ok_or(Error::NotInTimeScale(t))?;
        let seg = self.segments[i];
        if t < seg.end - MEMBERSHIP_TOL {
            return Ok(0.0);
        }
        Ok(self
            .segments
            .get(i + 1)
            .map_or(0.0, |next| next.start - seg.end))
    }

    /// Δ-measure of the whole window.
    pub fn delta_length(&self) -> f64 {
        let continuous: f64 = self.segments.iter().map(Segment::len).sum();
        let gaps: f64 = self
            .segments
            .windows(2)
            .map(|w| w[1].start - w[0].end)
            .sum();
        continuous + gaps
    }

    /// Shifts `k·period`, `k = 1..=K`, that fit in the window.
    pub fn translation_set(&self) -> Result<Vec<f64>> {
        let p = self.period.ok_or(Error::NotTranslationInvariant)?;
        let count = ((self.end - self.s0) / p + 1e-9).floor() as usize;
        Ok((1..=count).map(|k| k as f64 * p).collect())
    }

    /// Closed form of `e_{⊖α}(t, s)` read off the segment structure: continuous
    /// stretches contribute `exp(-α·length)`, each gap `1/(1 + μα)`.
    pub fn exp_ominus_closed(&self, alpha: f64, t: f64, s: f64) -> Result<f64> {
        if !self.contains(t) {
            return Err(Error::NotInTimeScale(t));
        }
        if !self.contains(s) {
            return Err(Error::NotInTimeScale(s));
        }
        let (lo, hi, sign) = if t >= s { (s, t, 1.0) } else { (t, s, -1.0) };
        let mut log = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let a = seg.start.max(lo);
            let b = seg.end.min(hi);
            if b > a {
                log -= alpha * (b - a);
            }
            // gap after this segment counts if its left end lies in [lo, hi)
            if let Some(next) = self.segments.get(i + 1) {
                if seg.end >= lo - MEMBERSHIP_TOL && seg.end < hi - MEMBERSHIP_TOL {
                    log -= (1.0 + (next.start - seg.end) * alpha).ln();
                }
            }
        }
        Ok((sign * log).exp())
    }

    /// The periodic extension of this time scale `periods` whole periods to the
    /// left of `s0`.
    pub fn extend_left(&self, periods: usize) -> Result<Self> {
        let p = self.period.ok_or(Error::NotTranslationInvariant)?;
        if self.end - self.s0 < p - MEMBERSHIP_TOL {
            return Err(Error::WindowTooShort(format!(
                "extension needs a window of at least one period ({p})"
            )));
        }
        let new_s0 = self.s0 - periods as f64 * p;
        let mut all: Vec<Segment> = self.segments.clone();
        for k in 1..=periods {
            let shift = k as f64 * p;
            all.extend(
                self.segments
                    .iter()
                    .map(|s| Segment::new(s.start - shift, s.end - shift)),
            );
        }
        all.sort_by(|x, y| x.start.total_cmp(&y.start));
        let mut merged: Vec<Segment> = Vec::with_capacity(all.len());
        for seg in all {
            if seg.end < new_s0 - MEMBERSHIP_TOL {
                continue;
            }
            let seg = Segment::new(seg.start.max(new_s0), seg.end);
            match merged.last_mut() {
                Some(last) if seg.start <= last.end + MEMBERSHIP_TOL => {
                    last.end = last.end.max(seg.end);
                }
                _ => merged.push(seg),
            }
        }
        Self::from_parts(merged, self.family, self.period, new_s0, self.end)
    }

    /// Samples the time scale; see [`TimeGrid`].
    pub fn make_grid(&self, steps_per_unit: usize) -> Result<TimeGrid> {
        TimeGrid::new(self, steps_per_unit)
    }
}

fn lattice_points(h: f64, s0: f64, end: f64) -> Vec<Segment> {
    let first = (s0 / h - 1e-9).ceil() as i64;
    let last = (end / h + 1e-9).floor() as i64;
    (first..=last)
        .map(|k| {
            let t = k as f64 * h;
            Segment::new(t, t)
        })
        .collect()
}

fn pab_segments(a: f64, b: f64, s0: f64, end: f64) -> Vec<Segment> {
    let p = a + b;
    let first = (s0 / p).floor() as i64 - 1;
    let last = (end / p).ceil() as i64 + 1;
    (first..=last)
        .filter_map(|k| {
            let start = k as f64 * p;
            let lo = start.max(s0);
            let hi = (start + a).min(end);
            (hi >= lo - MEMBERSHIP_TOL).then(|| Segment::new(lo, hi.max(lo)))
        })
        .collect()
}

/// One sampled point of a time scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Node {
    pub t: f64,
    pub sigma: f64,
    pub mu: f64,
    /// Weight of this node in the Δ-quadrature over the whole window.
    pub weight: f64,
}

impl Node {
    /// True when the interval to the next node is a gap of the time scale.
    pub fn is_right_scattered(&self) -> bool {
        self.mu > 0.0
    }
}

/// An ordered sampling of a [`TimeScale`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<Node>,
    steps_per_unit: usize,
    mu_sup: f64,
}

impl TimeGrid {
    pub fn new(ts: &TimeScale, steps_per_unit: usize) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::BadParams("steps_per_unit must be at least 1".into()));
        }
        let segs = ts.segments();
        let mut nodes = Vec::new();
        for (i, seg) in segs.iter().enumerate() {
            if !seg.is_point() {
                let n = ((seg.len() * steps_per_unit as f64) - 1e-9).ceil().max(1.0) as usize;
                let h = seg.len() / n as f64;
                for k in 0..n {
                    let t = seg.start + k as f64 * h;
                    nodes.push(Node { t, sigma: t, mu: 0.0, weight: 0.0 });
                }
            }
            let end = seg.end;
            let (sigma, mu) = match segs.get(i + 1) {
                Some(next) => (next.start, next.start - end),
                None => (end, 0.0),
            };
            nodes.push(Node { t: end, sigma, mu, weight: mu });
        }
        Ok(Self::from_nodes(nodes, steps_per_unit))
    }

    fn from_nodes(mut nodes: Vec<Node>, steps_per_unit: usize) -> Self {
        for n in nodes.iter_mut() {
            n.weight = n.mu;
        }
        for i in 0..nodes.len().saturating_sub(1) {
            if !nodes[i].is_right_scattered() {
                let half = 0.5 * (nodes[i + 1].t - nodes[i].t);
                nodes[i].weight += half;
                nodes[i + 1].weight += half;
            }
        }
        let mu_sup = nodes.iter().map(|n| n.mu).fold(0.0, f64::max);
        TimeGrid { nodes, steps_per_unit, mu_sup }
    }

    /// The nodes from index `from` on, as a grid of their own.
    pub fn tail(&self, from: usize) -> TimeGrid {
        Self::from_nodes(self.nodes[from..].to_vec(), self.steps_per_unit)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i].t
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().map(|n| n.t)
    }

    pub fn steps_per_unit(&self) -> usize {
        self.steps_per_unit
    }

    /// Largest graininess on the window.
    pub fn mu_sup(&self) -> f64 {
        self.mu_sup
    }

    pub fn s0(&self) -> f64 {
        self.nodes[0].t
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1].t
    }

    pub fn delta_length(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }

    /// Index of the node at `t` (within [`MEMBERSHIP_TOL`]).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let i = self.nodes.partition_point(|n| n.t < t - MEMBERSHIP_TOL);
        match self.nodes.get(i) {
            Some(n) if (n.t - t).abs() <= MEMBERSHIP_TOL => Ok(i),
            _ => Err(Error::NotANode(t)),
        }
    }

    /// Quadrature weights of the Δ-integral over `[t_lo, t_hi]`, as
    /// `(node index, weight, piece)` triples. The gap after a right-scattered
    /// node contributes `μ·f(node)`; continuous stretches use the trapezoid rule
    /// on the left limits of the integrand.
    pub fn partial_weights(
        &self,
        lo: usize,
        hi: usize,
    ) -> impl Iterator<Item = (usize, f64, Piece)> + '_ {
        (lo..hi).flat_map(move |i| {
            let node = &self.nodes[i];
            if node.is_right_scattered() {
                [(i, node.mu, Piece::Gap), (i + 1, 0.0, Piece::Gap)]
            } else {
                let half = 0.5 * (self.nodes[i + 1].t - node.t);
                [(i, half, Piece::Dense), (i + 1, half, Piece::Dense)]
            }
        })
    }
}

/// Which part of the time scale a quadrature weight belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// A continuous stretch, where `σ(t) = t`.
    Dense,
    /// The jump from a right-scattered node to `σ(node)`.
    Gap,
}
