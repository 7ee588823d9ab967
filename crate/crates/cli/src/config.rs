//! The `chronoscale/v1` configuration document.

use std::fmt;
use std::path::Path;

use chronoscale::expr::{Env, VectorExpr};
use chronoscale::semigroup::Generator;
use chronoscale::solver::ProblemSpec;
use chronoscale::timescale::{Family, Segment, TimeScale};
use chronoscale::Error;
use nalgebra::DVector;
use serde::Deserialize;

pub const SCHEMA_VERSION: &str = "chronoscale/v1";

/// A configuration problem, located by a JSON pointer into the document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub pointer: String,
    pub message: String,
}

impl ConfigError {
    fn at(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError { pointer: pointer.into(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pointer = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "config error at {pointer}: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    pub timescale: TimescaleConfig,
    pub generator: GeneratorConfig,
    #[serde(rename = "F")]
    pub f: Components,
    #[serde(rename = "H")]
    pub h: Components,
    pub initial: Initial,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimescaleConfig {
    pub family: FamilyName,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub h: Option<f64>,
    /// `[start, end]` pairs, for the explicit family.
    pub segments: Option<Vec<[f64; 2]>>,
    /// Overrides the translation period of the family.
    pub period: Option<f64>,
    pub s0: f64,
    #[serde(rename = "S")]
    pub end: f64,
    pub steps_per_unit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Reals,
    Integers,
    Hstep,
    Pab,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub matrix: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    pub components: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Initial {
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(rename = "lipschitz_F")]
    pub lipschitz_f: Option<f64>,
    #[serde(rename = "lipschitz_H")]
    pub lipschitz_h: Option<f64>,
    #[serde(rename = "truncation_T")]
    pub truncation_t: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub trajectory_csv: Option<String>,
    pub report_json: Option<String>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment as S;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            S::Seq { index } => out.push_str(&format!("/{index}")),
            S::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            S::Enum { variant } => out.push_str(&format!("/{variant}")),
            S::Unknown => {}
        }
    }
    out
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            ConfigError::at(pointer, e.into_inner())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks the version string and dimensional consistency.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::at("/schema", format!("expected \"{SCHEMA_VERSION}\", got \"{}\"", self.schema)));
        }
        let n = self.generator.n;
        if n == 0 {
            return Err(ConfigError::at("/generator/n", "must be at least 1"));
        }
        if self.generator.matrix.len() != n * n {
            return Err(ConfigError::at(
                "/generator/matrix",
                format!("expected {} entries for n = {n}, got {}", n * n, self.generator.matrix.len()),
            ));
        }
        let lengths = [
            ("/initial/y0", self.initial.y0.len()),
            ("/F/components", self.f.components.len()),
            ("/H/components", self.h.components.len()),
        ];
        for (pointer, len) in lengths {
            if len != n {
                return Err(ConfigError::at(pointer, format!("expected {n} entries (generator n), got {len}")));
            }
        }
        Ok(())
    }

    pub fn timescale(&self) -> Result<TimeScale, ConfigError> {
        let c = &self.timescale;
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| ConfigError::at(format!("/timescale/{key}"), "required for this family"))
        };
        let family = match c.family {
            FamilyName::Reals => Family::Reals,
            FamilyName::Integers => Family::Integers,
            FamilyName::Hstep => Family::HStep { h: need(c.h, "h")? },
            FamilyName::Pab => Family::Pab { a: need(c.a, "a")?, b: need(c.b, "b")? },
            FamilyName::Explicit => Family::Explicit,
        };
        let built = if family == Family::Explicit {
            let segments = c
                .segments
                .as_ref()
                .ok_or_else(|| ConfigError::at("/timescale/segments", "required for this family"))?;
            let segments = segments.iter().map(|[a, b]| Segment::new(*a, *b)).collect();
            TimeScale::explicit(segments, c.period).map_err(|e| ConfigError::at("/timescale/segments", e))?
        } else {
            let ts = TimeScale::build(family, c.s0, c.end).map_err(|e| ConfigError::at("/timescale", e))?;
            match c.period {
                Some(p) => ts.with_period(p).map_err(|e| ConfigError::at("/timescale/period", e))?,
                None => ts,
            }
        };
        if c.steps_per_unit == 0 {
            return Err(ConfigError::at("/timescale/steps_per_unit", "must be at least 1"));
        }
        Ok(built)
    }

    /// Builds the solver problem. `seed` overrides `solver.seed`.
    pub fn problem(&self, seed: Option<u64>) -> Result<ProblemSpec, ConfigError> {
        let n = self.generator.n;
        let generator = Generator::from_row_major(n, &self.generator.matrix)
            .map_err(|e| ConfigError::at("/generator/matrix", e))?;
        let f = VectorExpr::parse(&self.f.components, &Env::for_f(n))
            .map_err(|(i, e)| ConfigError::at(format!("/F/components/{i}"), e))?;
        let h = VectorExpr::parse(&self.h.components, &Env::for_h(n))
            .map_err(|(i, e)| ConfigError::at(format!("/H/components/{i}"), e))?;
        let ts = self.timescale()?;
        let y0 = DVector::from_column_slice(&self.initial.y0);
        let mut spec = ProblemSpec::new(generator, f, h, ts, self.timescale.steps_per_unit, y0)
            .map_err(|e| ConfigError::at("", e))?;
        let s = &self.solver;
        spec.tol = s.tol;
        spec.max_iter = s.max_iter;
        spec.lipschitz_f = s.lipschitz_f;
        spec.lipschitz_h = s.lipschitz_h;
        if let Some(samples) = s.samples {
            spec.samples = samples;
        }
        if let Some(seed) = seed.or(s.seed) {
            spec.seed = seed;
        }
        spec.validate().map_err(|e| ConfigError::at(solver_pointer(&e), e))?;
        if let Some(t) = s.truncation_t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::at("/solver/truncation_T", "must be a positive number"));
            }
        }
        Ok(spec)
    }
}

fn solver_pointer(e: &Error) -> &'static str {
    let text = e.to_string();
    for (needle, pointer) in [
        ("tol", "/solver/tol"),
        ("max_iter", "/solver/max_iter"),
        ("samples", "/solver/samples"),
        ("lipschitz_F", "/solver/lipschitz_F"),
        ("lipschitz_H", "/solver/lipschitz_H"),
        ("y0", "/initial/y0"),
    ] {
        if text.contains(needle) {
            return pointer;
        }
    }
    "/solver"
}
