use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use qclab_cli::commands::{self, Usage};
use qclab_cli::config::ConfigMap;
use qclab_cli::envelope::{write_atomic, write_envelope, Envelope};

#[derive(Parser)]
#[command(name = "qclab", version, about = "numerical workbench for planar quasiconformal maps")]
struct Cli {
    /// Configuration file with key = value lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding any seed from the configuration file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for report.json and sidecar files
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Force single-threaded execution (recorded in the report)
    #[arg(long, global = true)]
    serial: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the spectral transform against closed-form identities
    TransformCheck { overrides: Vec<String> },
    /// Solve one random Beltrami problem and report convergence diagnostics
    Solve { overrides: Vec<String> },
    /// Compute packing and smoothness constants for a square family
    Packing { overrides: Vec<String> },
    /// Estimate weighted operator norms across refinement levels
    WeightedNorm { overrides: Vec<String> },
    /// Run boundary-value distortion trials on random disk layouts
    Smirnov { overrides: Vec<String> },
    /// Generate a quasiline and measure covering sums and box dimension
    Hausdorff { overrides: Vec<String> },
    /// Measure derivative distribution tails for conformal model maps
    Riemann { overrides: Vec<String> },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TransformCheck { .. } => "transform-check",
            Command::Solve { .. } => "solve",
            Command::Packing { .. } => "packing",
            Command::WeightedNorm { .. } => "weighted-norm",
            Command::Smirnov { .. } => "smirnov",
            Command::Hausdorff { .. } => "hausdorff",
            Command::Riemann { .. } => "riemann",
        }
    }

    fn overrides(&self) -> &[String] {
        match self {
            Command::TransformCheck { overrides }
            | Command::Solve { overrides }
            | Command::Packing { overrides }
            | Command::WeightedNorm { overrides }
            | Command::Smirnov { overrides }
            | Command::Hausdorff { overrides }
            | Command::Riemann { overrides } => overrides,
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => ConfigMap::from_file(path).context(Usage)?,
        None => ConfigMap::default(),
    };
    cfg.apply_overrides(cli.command.overrides()).context(Usage)?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }

    let name = cli.command.name();
    let output = commands::run(name, &cfg)?;

    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("QCLAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    for (file, bytes) in &output.sidecars {
        write_atomic(&out_dir.join(file), bytes)?;
    }
    let envelope = Envelope::new(
        name,
        output.master_seed,
        cli.serial,
        cfg.values().clone(),
        output.payload,
    );
    let path = write_envelope(&out_dir, &envelope)?;
    println!(
        "{}: {} -> {}",
        name,
        if output.pass { "pass" } else { "FAIL" },
        path.display()
    );
    Ok(output.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            let usage = err.downcast_ref::<Usage>().is_some();
            eprintln!("error: {err:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
