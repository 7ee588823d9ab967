//! `solve`, `check`, `expfun` and `diagnose`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use chronoscale::automorphy::{aa_diagnose, bi_aa_diagnose, AADiagnostic, Verdict};
use chronoscale::calculus::{ExpTable, GridFunction, Trajectory};
use chronoscale::expr::Args;
use chronoscale::solver::{
    check_hypotheses, observed_ratio, solve_truncated_line, HypothesisResults, ProblemSpec, ScaleContext, Solver,
    SolverReport,
};
use chronoscale::timescale::{Family, TimeScale};
use chronoscale::Error;
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Config, ConfigError};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    NoConvergence = 2,
    HypothesisFailure = 3,
    ViolatesAA = 4,
    Inconclusive = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn of(verdict: Verdict) -> Self {
        match verdict {
            Verdict::ConsistentWithAA => ExitStatus::Success,
            Verdict::ViolatesAA => ExitStatus::ViolatesAA,
            Verdict::Inconclusive => ExitStatus::Inconclusive,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub verbose: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { out_dir: PathBuf::from("."), seed: None, verbose: false }
    }
}

pub const DEFAULT_TRAJECTORY: &str = "trajectory.csv";
pub const DEFAULT_REPORT: &str = "report.json";
/// Truncation used by `diagnose --target solution` when the config sets none.
pub const DEFAULT_TRUNCATION: f64 = 10.0;

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn load(config_path: &Path, opts: &Options) -> Result<(Config, ProblemSpec), ConfigError> {
    let config = Config::load(config_path)?;
    let spec = config.problem(opts.seed)?;
    Ok((config, spec))
}

fn output_path(opts: &Options, configured: Option<&String>, default: &str) -> PathBuf {
    opts.out_dir.join(configured.map_or(default, String::as_str))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `t,sigma,mu,y0..,z0..`, one row per node.
pub fn trajectory_csv(y: &Trajectory, z: &Trajectory) -> String {
    let n = y.dim();
    let mut out = String::from("t,sigma,mu");
    for prefix in ["y", "z"] {
        for i in 0..n {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push('\n');
    for (k, node) in y.grid().nodes().iter().enumerate() {
        let mut row = vec![fmt_num(node.t), fmt_num(node.sigma), fmt_num(node.mu)];
        row.extend(y.values()[k].iter().map(|&v| fmt_num(v)));
        row.extend(z.values()[k].iter().map(|&v| fmt_num(v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Report written when the iteration stops without converging; same fields
/// as a converged report.
#[derive(Serialize)]
struct UnconvergedReport<'a> {
    iterations: usize,
    step_norms: &'a [f64],
    contraction_ratio_observed: f64,
    contraction_ratio_theoretical: f64,
    hypothesis_results: &'a HypothesisResults,
    residual: f64,
    ball_radius_k: f64,
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn report_config_error(e: &ConfigError) -> ExitStatus {
    eprintln!("{e}");
    ExitStatus::Usage
}

fn report_error(e: &anyhow::Error) -> ExitStatus {
    eprintln!("error: {e:#}");
    ExitStatus::Usage
}

pub fn solve(config_path: &Path, opts: &Options) -> ExitStatus {
    let (config, spec) = match load(config_path, opts) {
        Ok(v) => v,
        Err(e) => return report_config_error(&e),
    };
    match run_solve(&config, &spec, opts) {
        Ok(status) => status,
        Err(e) => report_error(&e),
    }
}

fn run_solve(config: &Config, spec: &ProblemSpec, opts: &Options) -> anyhow::Result<ExitStatus> {
    let hypotheses = check_hypotheses(spec)?;
    let solver = Solver::new(spec)?;
    let report_path = output_path(opts, config.output.report_json.as_ref(), DEFAULT_REPORT);
    match solver.iterate(solver.constant_guess()) {
        Ok(fixed_point) => {
            let report = SolverReport::new(fixed_point, hypotheses);
            let csv_path = output_path(opts, config.output.trajectory_csv.as_ref(), DEFAULT_TRAJECTORY);
            write_file(&csv_path, &trajectory_csv(&report.trajectory, &report.z))?;
            write_file(&report_path, &to_json(&report)?)?;
            println!(
                "converged after {} iterations, residual {:e}; H4 lhs {} ({})",
                report.iterations,
                report.residual,
                report.contraction_ratio_theoretical,
                if report.hypothesis_results.all_satisfied() { "hypotheses satisfied" } else { "hypotheses NOT all satisfied" },
            );
            if opts.verbose {
                println!("wrote {} and {}", csv_path.display(), report_path.display());
            }
            Ok(ExitStatus::Success)
        }
        Err(Error::NoConvergence { step_norms }) => {
            let scale = spec.y0.amax().max(1.0);
            let report = UnconvergedReport {
                iterations: step_norms.len(),
                step_norms: &step_norms,
                contraction_ratio_observed: observed_ratio(&step_norms, scale),
                contraction_ratio_theoretical: hypotheses.h4_lhs(),
                hypothesis_results: &hypotheses,
                residual: step_norms.last().copied().unwrap_or(f64::NAN),
                ball_radius_k: hypotheses.ball_radius_k,
            };
            write_file(&report_path, &to_json(&report)?)?;
            eprintln!("no convergence after {} iterations", step_norms.len());
            Ok(ExitStatus::NoConvergence)
        }
        Err(e) => Err(e.into()),
    }
}

/// The hypothesis table printed by `check`.
pub fn hypothesis_table(h: &HypothesisResults) -> String {
    let mut out = format!("{:<10} {:>24} {:>24}  {}\n", "hypothesis", "lhs", "rhs", "satisfied");
    for row in &h.rows {
        let _ = writeln!(out, "{:<10} {:>24} {:>24}  {}", row.name, fmt_num(row.lhs), fmt_num(row.rhs), row.satisfied);
    }
    out
}

pub fn check(config_path: &Path, opts: &Options) -> ExitStatus {
    let (_, spec) = match load(config_path, opts) {
        Ok(v) => v,
        Err(e) => return report_config_error(&e),
    };
    match check_hypotheses(&spec) {
        Ok(h) => {
            print!("{}", hypothesis_table(&h));
            if opts.verbose {
                match to_json(&h) {
                    Ok(text) => print!("{text}"),
                    Err(e) => return report_error(&e),
                }
            }
            if h.all_satisfied() {
                ExitStatus::Success
            } else {
                ExitStatus::HypothesisFailure
            }
        }
        Err(e) => report_error(&e.into()),
    }
}

/// Parameters of `expfun`.
#[derive(Debug, Clone)]
pub struct ExpFunArgs {
    pub family: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub h: Option<f64>,
    pub alpha: f64,
    pub s0: f64,
    pub end: f64,
    pub steps: usize,
}

/// CSV `t,e_ominus_alpha` of `e_{⊖α}(t, s0)` on the grid of the time scale.
pub fn expfun_csv(args: &ExpFunArgs) -> Result<String, Error> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::BadParams(format!("family {} needs --{what}", args.family)))
    };
    let family = match args.family.as_str() {
        "reals" => Family::Reals,
        "integers" => Family::Integers,
        "hstep" => Family::HStep { h: need(args.h, "h")? },
        "pab" => Family::Pab { a: need(args.a, "a")?, b: need(args.b, "b")? },
        other => return Err(Error::BadParams(format!("unknown family {other:?}"))),
    };
    if !(args.alpha > 0.0 && args.alpha.is_finite()) {
        return Err(Error::BadParams(format!("alpha must be positive, got {}", args.alpha)));
    }
    let grid = TimeScale::build(family, args.s0, args.end)?.make_grid(args.steps)?;
    let table = ExpTable::ominus(&grid, args.alpha)?;
    let mut out = String::from("t,e_ominus_alpha\n");
    for (j, t) in grid.times().enumerate() {
        let _ = writeln!(out, "{},{}", fmt_num(t), fmt_num(table.between(j, 0)));
    }
    Ok(out)
}

pub fn expfun(args: &ExpFunArgs) -> ExitStatus {
    match expfun_csv(args) {
        Ok(csv) => {
            print!("{csv}");
            ExitStatus::Success
        }
        Err(e) => report_error(&e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    F,
    H,
    Solution,
}

#[derive(Serialize)]
struct TruncationSummary {
    periods: usize,
    truncation: f64,
    error_bound: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct DiagnosisReport {
    target: &'static str,
    diagnostic: AADiagnostic,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncated_line: Option<TruncationSummary>,
}

/// `s ↦ F(s, y0, 0)` on the grid.
fn sample_f(spec: &ProblemSpec) -> anyhow::Result<GridFunction> {
    let grid = spec.grid()?;
    let ctx = ScaleContext { ts: &spec.timescale, s0: spec.s0() };
    let zero = vec![0.0; spec.dim()];
    let values = grid
        .times()
        .map(|s| {
            let vectors = [spec.y0.as_slice(), zero.as_slice()];
            let scalars = [s];
            spec.f
                .eval(&Args::new(&scalars, &vectors).with_context(&ctx))
                .map_err(|source| Error::ExprAt { t: s, tau: None, source })
        })
        .collect::<Result<Vec<DVector<f64>>, Error>>()?;
    Ok(GridFunction::new(grid, values)?)
}

pub fn diagnose_report(config: &Config, spec: &ProblemSpec, target: Target, shifts: usize) -> anyhow::Result<(String, Verdict)> {
    let ts = &spec.timescale;
    let (name, diagnostic, truncated_line) = match target {
        Target::F => ("F", aa_diagnose(&sample_f(spec)?, ts, shifts)?, None),
        Target::H => {
            let y = GridFunction::constant(spec.grid()?, &spec.y0);
            ("H", bi_aa_diagnose(&spec.h, ts, &y, shifts)?, None)
        }
        Target::Solution => {
            let truncation = config.solver.truncation_t.unwrap_or(DEFAULT_TRUNCATION);
            let line = solve_truncated_line(spec, truncation)?;
            let diag = aa_diagnose(&line.trajectory, ts, shifts)?;
            let summary = TruncationSummary {
                periods: line.periods,
                truncation: line.truncation,
                error_bound: line.error_bound,
                iterations: line.iterations,
            };
            ("solution", diag, Some(summary))
        }
    };
    let verdict = diagnostic.verdict;
    Ok((to_json(&DiagnosisReport { target: name, diagnostic, truncated_line })?, verdict))
}

pub fn diagnose(config_path: &Path, target: Target, shifts: usize, opts: &Options) -> ExitStatus {
    let (config, spec) = match load(config_path, opts) {
        Ok(v) => v,
        Err(e) => return report_config_error(&e),
    };
    if spec.timescale.period().is_none() {
        eprintln!("error: {}", Error::NotTranslationInvariant);
        return ExitStatus::Usage;
    }
    match diagnose_report(&config, &spec, target, shifts) {
        Ok((json, verdict)) => {
            print!("{json}");
            ExitStatus::of(verdict)
        }
        Err(e) => report_error(&e),
    }
}
