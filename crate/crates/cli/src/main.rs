//! `bsde`: run table presets or JSON experiment files, and query the
//! closed-form references.
//!
//! `BSDE_THREADS` sets the size of the worker pool; nothing else is read
//! from the environment.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bsde_core::experiment::{
    emit_report, preset, run_experiment, write_csv, ExperimentReport, ExperimentSpec, ReportFormat,
};
use bsde_core::finance::{black_scholes_call, combination_bounds};
use bsde_core::solver::TruncationPolicy;
use bsde_core::Execution;

const THREADS_VAR: &str = "BSDE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "bsde",
    version,
    about = "Regression Monte Carlo solver for decoupled FBSDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a built-in table preset.
    Run {
        #[arg(long)]
        preset: String,
        /// 1-based table column.
        #[arg(long, default_value_t = 1)]
        column: usize,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: Output,
    },
    /// Run an experiment described by a JSON file.
    Price {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: Output,
    },
    /// Closed-form reference prices.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Path counts; repeat or comma-separate for a grid.
    #[arg(long = "m", value_delimiter = ',')]
    m_grid: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of time steps N.
    #[arg(long)]
    steps: Option<usize>,
    /// Picard iterations I.
    #[arg(long)]
    picard: Option<usize>,
    /// Disable truncation of regressed values.
    #[arg(long)]
    no_truncation: bool,
    /// Run repetitions on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, clap::Args)]
struct Output {
    /// Report file; a summary table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Oracle {
    /// Black–Scholes European call.
    #[command(allow_negative_numbers = true)]
    Bs {
        #[arg(long)]
        s0: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        t: f64,
    },
    /// Black–Scholes bounds for the calls combination under two rates.
    #[command(allow_negative_numbers = true)]
    Bounds {
        #[arg(long)]
        s0: f64,
        #[arg(long)]
        k1: f64,
        #[arg(long)]
        k2: f64,
        #[arg(long)]
        r: f64,
        #[arg(long = "big-r")]
        big_r: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        t: f64,
    },
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if !self.m_grid.is_empty() {
            spec.m_grid = self.m_grid.clone();
        }
        if let Some(r) = self.reps {
            spec.repetitions = r;
        }
        if let Some(s) = self.seed {
            spec.base_seed = s;
        }
        if let Some(n) = self.steps {
            spec.n_steps = n;
        }
        if let Some(i) = self.picard {
            spec.picard_iters = i;
        }
        if self.no_truncation {
            spec.truncation = TruncationPolicy::Disabled;
        }
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    println!("{}  ({} repetitions)", report.name, report.repetitions);
    println!(
        "{:>8}  {:>12}  {:>12}  {:>10}",
        "M", "mean", "std", "time [s]"
    );
    for row in &report.rows {
        println!(
            "{:>8}  {:>12.6}  {:>12.6}  {:>10.3}",
            row.m, row.mean, row.std, row.wall_time_s
        );
    }
}

fn run_spec(mut spec: ExperimentSpec, overrides: &Overrides, output: &Output) -> Result<()> {
    overrides.apply(&mut spec);
    spec.validate()?;
    let report = run_experiment(&spec, overrides.execution())?;
    match &output.out {
        Some(path) => {
            let format = match output.format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Json => ReportFormat::Json,
            };
            emit_report(&report, format, path)?;
            print_summary(&report);
        }
        None => match output.format {
            FormatArg::Csv => write_csv(&report, std::io::stdout().lock())?,
            FormatArg::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        },
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            preset: name,
            column,
            overrides,
            output,
        } => run_spec(preset(&name, column)?, &overrides, &output),
        Command::Price {
            config,
            overrides,
            output,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let spec: ExperimentSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", config.display()))?;
            run_spec(spec, &overrides, &output)
        }
        Command::Oracle { which } => {
            match which {
                Oracle::Bs { s0, k, r, sigma, t } => {
                    println!("{:.10}", black_scholes_call(s0, k, r, sigma, t)?);
                }
                Oracle::Bounds {
                    s0,
                    k1,
                    k2,
                    r,
                    big_r,
                    sigma,
                    t,
                } => {
                    if k1 >= k2 {
                        bail!("need k1 < k2, got k1 = {k1}, k2 = {k2}");
                    }
                    let b = combination_bounds(s0, k1, k2, r, big_r, sigma, t)?;
                    let labels = [
                        "BS1(R)-2BS2(R)",
                        "BS1(r)-2BS2(r)",
                        "BS1(r)-2BS2(R)",
                        "BS1(R)-2BS2(r)",
                    ];
                    for (label, v) in labels.iter().zip(b) {
                        println!("{label} {v:.10}");
                    }
                }
            }
            Ok(())
        }
    }
}

/// Usage errors are reduced to clap's one-line message; help and version
/// output are printed as usual.
fn parse_args() -> std::result::Result<Cli, ExitCode> {
    use clap::error::ErrorKind;
    Cli::try_parse().map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp
        | ErrorKind::DisplayVersion
        | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
        _ => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!(
                "bsde: error: {}",
                first.trim_start_matches("error:").trim_start()
            );
            ExitCode::from(2)
        }
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("bsde: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
