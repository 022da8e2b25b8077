//! Drives the seeded experiment runner from code: runs every experiment with
//! its defaults, prints the checks, and writes one report into a temporary
//! directory, just as `foliate run` would.
//!
//! cargo run --release --example experiment_harness

use std::path::Path;

use foliate::harness::{self, Experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for e in Experiment::ALL {
        let report = harness::run_in_memory(&ExperimentConfig::new(e), Path::new("."))?;
        println!("{} ({:.2}s)", e.name(), report.duration_secs);
        for c in &report.checks {
            println!("  {c}");
        }
    }

    let dir = tempfile::tempdir()?;
    let cfg = ExperimentConfig::new(Experiment::MamlLeaf).with_param("n", 8);
    let report = harness::run(&cfg, Path::new("."), dir.path())?;
    let mut files: Vec<_> = std::fs::read_dir(dir.path())?
        .map(|f| f.map(|f| f.file_name()))
        .collect::<Result<_, _>>()?;
    files.sort();
    println!("\nwrote {files:?}, exit code {}", report.exit_code());
    print!("{}", harness::emit_plot_data(&report)?);
    Ok(())
}
