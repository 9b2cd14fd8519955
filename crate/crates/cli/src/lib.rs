//! Command-line front end: `simulate`, `analyze`, `duration-study`, `version`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "boldkit", about = "Block-design fMRI analysis and phantom toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom runs and a ground-truth sidecar.
    Simulate(Common),
    /// Preprocess, fit the GLM, threshold with FDR and extract clusters.
    Analyze(Common),
    /// Compare single-run, concatenated and averaged analyses of two runs.
    DurationStudy(Common),
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// FDR level [default: 0.05]
    #[arg(long)]
    q: Option<f64>,
    /// Smoothing FWHM in mm [default: 8]
    #[arg(long)]
    fwhm: Option<f64>,
    /// High-pass cutoff [default: 0.005]
    #[arg(long)]
    cutoff_hz: Option<f64>,
    /// Cluster connectivity: 6, 18 or 26 [default: 26]
    #[arg(long, value_parser = ["6", "18", "26"])]
    connectivity: Option<String>,
    /// Input run (repeatable); replaces `input.files`.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&Overrides {
            out: self.out.clone(),
            seed: self.seed,
            threads: self.threads,
            q: self.q,
            fwhm: self.fwhm,
            cutoff_hz: self.cutoff_hz,
            connectivity: self.connectivity.as_deref().map(|c| c.parse().expect("validated by clap")),
            inputs: self.inputs.clone(),
        });
        Ok(cfg)
    }
}

fn with_threads<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match cfg.threads()? {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::config(format!("`threads`: {e}")))?
            .install(f),
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Version => println!("boldkit {}", manifest::VERSION),
        Command::Simulate(c) => {
            let cfg = c.resolve()?;
            let out = with_threads(&cfg, || commands::simulate(&cfg))?;
            println!("wrote {}", out.display());
        }
        Command::Analyze(c) => {
            let cfg = c.resolve()?;
            let s = with_threads(&cfg, || commands::analyze(&cfg))?;
            print!(
                "wrote {}: {} voxels rejected, {} clusters",
                s.out.display(),
                s.n_rejected,
                s.n_clusters
            );
            match s.dice {
                Some(d) => println!(", dice vs truth {d:.3}"),
                None => println!(),
            }
        }
        Command::DurationStudy(c) => {
            let cfg = c.resolve()?;
            let out = with_threads(&cfg, || commands::duration(&cfg))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("boldkit: {e}");
            e.exit_code()
        }
    }
}
