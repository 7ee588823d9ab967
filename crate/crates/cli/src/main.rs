use std::path::PathBuf;
use std::process::ExitCode;

use chronoscale_cli::commands::{self, ExpFunArgs, Target};
use chronoscale_cli::Options;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chronoscale", version, about = "Integro-dynamic equations on time scales")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Seed of the sampled Lipschitz and bound estimates (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    #[value(name = "F")]
    F,
    #[value(name = "H")]
    H,
    #[value(name = "solution")]
    Solution,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem and write the trajectory CSV and report JSON.
    Solve(ConfigArg),
    /// Check hypotheses H1 to H4 only.
    Check(ConfigArg),
    /// Tabulate e_{⊖α}(t, s0) as CSV.
    Expfun {
        #[arg(long)]
        family: String,
        #[arg(long)]
        a: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        s0: f64,
        #[arg(long = "S", allow_hyphen_values = true)]
        end: f64,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Finite-window automorphy diagnostics.
    Diagnose {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        target: TargetArg,
        #[arg(long, default_value_t = 3)]
        shifts: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let opts = Options { out_dir: cli.out_dir, seed: cli.seed, verbose: cli.verbose };
    let status = match cli.command {
        Command::Solve(c) => commands::solve(&c.config, &opts),
        Command::Check(c) => commands::check(&c.config, &opts),
        Command::Expfun { family, a, b, h, alpha, s0, end, steps } => {
            commands::expfun(&ExpFunArgs { family, a, b, h, alpha, s0, end, steps })
        }
        Command::Diagnose { config, target, shifts } => {
            let target = match target {
                TargetArg::F => Target::F,
                TargetArg::H => Target::H,
                TargetArg::Solution => Target::Solution,
            };
            commands::diagnose(&config.config, target, shifts, &opts)
        }
    };
    ExitCode::from(status.code() as u8)
}
