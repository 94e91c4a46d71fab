//! Command-line front end: `train`, `eval`, `ablate`, `interpret` and `synth`.
//!
//! Exit status is 0 on success, 2 for usage, configuration and input
//! errors, and 3 when training diverges numerically.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{CliError, CliResult};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "sec2sec", version, about = "Segment-level co-attention models for audio-visual affect")]
pub struct Cli {
    /// Worker threads for data loading and batch gradients (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant with a learning-rate grid and early stopping.
    Train(RunArgs),
    /// Score a checkpoint on a manifest.
    Eval(CheckpointArgs),
    /// Train all five variants on a synthetic task and tabulate the results.
    Ablate(RunArgs),
    /// Export per-segment attention weights from an interpretable checkpoint.
    Interpret(CheckpointArgs),
    /// Write a synthetic dataset (manifests and token files).
    Synth(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest (overrides `manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

impl RunArgs {
    /// File, then flags, then `--set` pairs, then the environment seed.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(v) = &self.variant {
            cfg.set("variant", v)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        cfg.apply_overrides(&self.overrides)?;
        cfg.resolve_seed()?;
        Ok(cfg)
    }
}

pub fn dispatch(cli: &Cli) -> CliResult {
    if let Some(jobs) = cli.jobs {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
    }
    match &cli.command {
        Command::Train(a) => commands::cmd_train(&a.resolve()?, &a.out, a.force),
        Command::Ablate(a) => commands::cmd_ablate(&a.resolve()?, &a.out, a.force),
        Command::Synth(a) => {
            let (train, test) = commands::cmd_synth(&a.resolve()?, &a.out, a.force)?;
            println!("{}\n{}", train.display(), test.display());
            Ok(())
        }
        Command::Eval(a) => commands::cmd_eval(&a.checkpoint, &a.manifest, &a.out, a.force),
        Command::Interpret(a) => commands::cmd_interpret(&a.checkpoint, &a.manifest, &a.out, a.force),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
