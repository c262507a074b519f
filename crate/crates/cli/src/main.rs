use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dlgp::scenario::{self, ReportRow, ScenarioOptions};
use dlgp::{load_config, load_csv, Execution, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dlgp", version, about = "Streaming local GP regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream training data and evaluate a test set at uniformly spaced checkpoints.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Test set CSV (same columns as the training data).
        #[arg(long)]
        test: PathBuf,
        /// Number of checkpoints (overrides the config).
        #[arg(long)]
        checkpoints: Option<usize>,
    },
    /// Predict each sample before learning it and report online metrics.
    Stream {
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in consistency checks and print pass/fail per check.
    Verify {
        /// Use larger problem sizes.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Training/stream CSV: input columns followed by target columns.
    #[arg(long)]
    data: PathBuf,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Report CSV path; defaults to the config's report_path, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Learn the per-target trees in parallel.
    #[arg(long)]
    parallel_targets: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn options(&self) -> Result<ScenarioOptions> {
        if self.parallel_targets && !Execution::Parallel.is_parallel() {
            bail!("--parallel-targets requires a build with the `parallel` feature");
        }
        let targets = if self.parallel_targets { Execution::Parallel } else { Execution::Sequential };
        Ok(ScenarioOptions { targets })
    }

    fn output(&self, cfg: &ExperimentConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| cfg.report_path.clone())
    }
}

fn write_rows(rows: &[ReportRow], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            scenario::write_report(rows, BufWriter::new(file))?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => scenario::write_report(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Bench { common, test, checkpoints } => {
            let mut cfg = common.load()?;
            if let Some(c) = checkpoints {
                cfg.checkpoints = c;
                cfg.validate()?;
            }
            let train = load_csv(&common.data, cfg.input_dim, cfg.target_dim())
                .with_context(|| format!("loading {}", common.data.display()))?;
            let test = load_csv(&test, cfg.input_dim, cfg.target_dim())
                .with_context(|| format!("loading {}", test.display()))?;
            let rows = scenario::run_checkpoint_scenario(&train, &test, &cfg, common.options()?)?;
            write_rows(&rows, common.output(&cfg).as_deref())?;
            Ok(true)
        }
        Command::Stream { common } => {
            let cfg = common.load()?;
            let data = load_csv(&common.data, cfg.input_dim, cfg.target_dim())
                .with_context(|| format!("loading {}", common.data.display()))?;
            let rows = scenario::run_online_scenario(&data, &cfg, common.options()?)?;
            write_rows(&rows, common.output(&cfg).as_deref())?;
            Ok(true)
        }
        Command::Verify { full } => {
            let checks = dlgp::verify::run_checks(!full);
            let mut out = io::stdout().lock();
            for c in &checks {
                writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
