use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use foliate::harness::{self, ExperimentConfig, HarnessError, RunReport};

#[derive(Parser)]
#[command(name = "foliate", version, about = "Run foliation and transfer-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a named property suite (`all` runs every suite).
    Check {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print x,y,series plot data for a report.
    Plot { report: PathBuf },
}

fn run(config_path: &Path, seed: Option<u64>) -> Result<i32, HarnessError> {
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out = harness::resolve_output_dir(&config, base);
    let report = harness::run(&config, base, &out)?;
    for c in &report.checks {
        println!("{c}");
    }
    println!(
        "{}: {}/{} checks passed in {:.3}s, output in {}",
        config.experiment,
        report.summary.checks - report.summary.failed,
        report.summary.checks,
        report.duration_secs,
        out.display()
    );
    Ok(report.exit_code())
}

fn check(suite: &str, seed: u64) -> Result<i32, HarnessError> {
    let checks = harness::run_suite(suite, seed)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{suite}: {}/{} checks passed", checks.len() - failed, checks.len());
    Ok(i32::from(failed > 0))
}

fn plot(path: &Path) -> Result<i32, HarnessError> {
    let report = RunReport::from_path(path)?;
    print!("{}", harness::emit_plot_data(&report)?);
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, seed } => run(config, *seed),
        Command::Check { suite, seed } => check(suite, *seed),
        Command::Plot { report } => plot(report),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
