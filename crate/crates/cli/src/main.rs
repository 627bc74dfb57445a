use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ghlip_core::harness::output::{format_f64, to_json};
use ghlip_core::harness::{run, run_sweep, ExperimentConfig, ExperimentReport, Stage, StageStatus};

#[derive(Parser, Debug)]
#[command(
    name = "ghlip",
    version,
    about = "Glued near-isometries between Gromov-Hausdorff close surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and cached intermediates.
    #[arg(long, global = true, env = "GHLIP_OUT")]
    out: Option<PathBuf>,
    /// Overrides the net, sampling and trial seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stage to run (repeatable); defaults to the subcommand's stage.
    #[arg(long = "stage", global = true)]
    stages: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Build and validate the net.
    Net,
    /// Build local charts and check them.
    Charts,
    /// Glue the charts and audit the differential.
    Glue,
    /// Measure the Lipschitz distortion and audit injectivity.
    Measure,
    /// Run the estimate and lemma checks.
    VerifyLemmas,
    /// Run every configured stage.
    Report,
    /// Run the configured delta sweep.
    Sweep,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config <path> is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = cli.seed {
        config.seeds.net = s;
        config.seeds.sampling = s;
        config.seeds.trials = s;
    }
    let default = match cli.command {
        Command::Net => Some(Stage::Net),
        Command::Charts => Some(Stage::Charts),
        Command::Glue => Some(Stage::Glue),
        Command::Measure => Some(Stage::Measure),
        Command::VerifyLemmas => Some(Stage::VerifyLemmas),
        Command::Report | Command::Sweep => None,
    };
    if !cli.stages.is_empty() {
        config.stages = cli.stages.iter().map(|s| Stage::parse(s)).collect::<Result<_, _>>()?;
    } else if let Some(s) = default {
        config.stages = vec![s];
    }
    Ok(config)
}

fn print_stages(report: &ExperimentReport) {
    for s in &report.stages {
        let status = match s.status {
            StageStatus::Passed => "passed",
            StageStatus::Failed => "FAILED",
            StageStatus::Skipped => "skipped",
        };
        match &s.cause {
            Some(c) => eprintln!("{:<15} {status}: {c}", s.stage.name()),
            None => eprintln!("{:<15} {status}", s.stage.name()),
        }
    }
    if let Some(d) = report.d_lip() {
        eprintln!("d_lip = {}", format_f64(d));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let config = load(cli)?;
    let out = cli.out.clone().or_else(|| config.output.clone());
    if cli.command == Command::Sweep {
        let sweep = run_sweep(&config, out.as_deref())?;
        for r in &sweep.runs {
            eprintln!("delta = {}", r.report.delta);
            print_stages(&r.report);
        }
        if let Some(fit) = sweep.summary.fit {
            eprintln!("fitted exponent in delta = {}", format_f64(fit.exponent));
        }
        eprintln!("strictly decreasing: {}", sweep.summary.strictly_decreasing);
        if out.is_none() {
            print!("{}", to_json(&sweep.summary)?);
        }
        return Ok(sweep.runs.iter().all(|r| r.report.passed));
    }
    let result = run(&config, out.as_deref())?;
    if out.is_none() {
        print!("{}", to_json(&result.report)?);
    }
    print_stages(&result.report);
    Ok(result.report.passed)
}
