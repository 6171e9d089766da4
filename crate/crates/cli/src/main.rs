use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use pfsim::bench::calibrate::DEFAULT_TARGET_US;
use pfsim::bench::soak::{soak, soak_csv};
use pfsim::bench::{self, BenchError, ScenarioConfig, StatsReport, SweepAxis};

#[derive(Parser)]
#[command(name = "pfsim", version, about = "Page-fault tolerant RDMA simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Summary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Sizes,
    Timeouts,
    Policies,
}

#[derive(clap::Args)]
struct Output {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario over its configured sizes.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Run one scenario per value of an axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[command(flatten)]
        output: Output,
    },
    /// Fit the per-packet cost to a 16 B round-trip target and print the
    /// resulting config.
    Calibrate {
        #[arg(long = "target-16b-us", default_value_t = DEFAULT_TARGET_US)]
        target_us: f64,
        /// Start from this config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized single-transfer integrity run.
    Soak {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes, each with its own exit status.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        // The display text already carries the cause; the error chain would repeat it.
        let msg = anyhow::anyhow!("{e}");
        match e {
            BenchError::Config(_) | BenchError::Unsatisfiable(_) => Failure::Config(msg),
            _ => Failure::Run(msg),
        }
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path).map_err(BenchError::from)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), Failure> {
    let res = match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => std::io::stdout().write_all(bytes).context("writing stdout"),
    };
    res.map_err(Failure::Config)
}

fn emit_reports(reports: &[StatsReport], o: &Output) -> Result<(), Failure> {
    let bytes = match o.format {
        Format::Csv => bench::to_csv(reports),
        Format::Summary => bench::summary(reports).into_bytes(),
    };
    emit(&bytes, o.out.as_deref())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Run { config, output } => {
            let cfg = load(&config, output.seed)?;
            let report = bench::run_scenario(&cfg)?;
            emit_reports(&[report], &output)
        }
        Cmd::Sweep { config, axis, output } => {
            let cfg = load(&config, output.seed)?;
            let axis = match axis {
                Axis::Sizes => SweepAxis::Sizes,
                Axis::Timeouts => SweepAxis::Timeouts,
                Axis::Policies => SweepAxis::Policies,
            };
            let reports = bench::run_sweep(&cfg, axis)?;
            emit_reports(&reports, &output)
        }
        Cmd::Calibrate { target_us, config, out } => {
            let base = match config {
                Some(p) => load(&p, None)?,
                None => ScenarioConfig::default(),
            };
            let (cfg, rec) = bench::calibrate(&base, target_us)?;
            let text = format!(
                "# target 16 B round trip: {} us\n# achieved: {:.3} us with per_packet_ns = {}\n{}",
                rec.target_us,
                rec.achieved_us,
                rec.per_packet_ns,
                cfg.render()
            );
            emit(text.as_bytes(), out.as_deref())
        }
        Cmd::Soak { seed, count, out } => {
            let outcomes = soak(seed, count)?;
            emit(&soak_csv(&outcomes), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
