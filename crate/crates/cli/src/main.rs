use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftless_cli::commands;
use driftless_cli::{init_threads, Result, RunConfig};

/// Frame-level prompt video diffusion on a synthetic latent world.
#[derive(Parser)]
#[command(name = "driftless", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; the shipped default is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set inference.mode=fifo`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("out={}", toml_string(&o.to_string_lossy())));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training clips.
    GenData(Common),
    /// Train the denoiser on the generated clips.
    Train(Common),
    /// Generate benchmark sequences with the configured mode and prompting.
    Infer(Common),
    /// Score every generated variant.
    Eval(Common),
    /// Summary tables and SVG plots.
    Report(Common),
    /// gen-data, train, infer for the four benchmark variants, eval, report.
    Pipeline(Common),
    /// Check a caption JSON file against the caption contract.
    ValidateCaptions {
        file: PathBuf,
        /// Expected frame count; defaults to the number of entries.
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData(c) => {
            let dir = commands::gen_data(&c.resolve()?)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train(c) => {
            let s = commands::train(&c.resolve()?)?;
            println!(
                "checkpoint {} (loss {:.4} -> smoothed {:.4})",
                s.checkpoint.display(),
                s.first_loss,
                s.final_smoothed_loss
            );
        }
        Command::Infer(c) => {
            let dir = commands::infer(&c.resolve()?)?;
            println!("sequences written to {}", dir.display());
        }
        Command::Eval(c) => {
            let cfg = c.resolve()?;
            let rows = commands::eval(&cfg)?;
            println!("{} runs scored into {}", rows.len(), cfg.out.join("eval").display());
        }
        Command::Report(c) => {
            let dir = commands::report(&c.resolve()?)?;
            println!("report written to {}", dir.display());
        }
        Command::Pipeline(c) => {
            let dir = commands::pipeline(&c.resolve()?)?;
            println!("report written to {}", dir.display());
        }
        Command::ValidateCaptions { file, frames } => {
            let check = commands::validate_captions(&file, frames)?;
            println!("{}: valid ({} frames)", file.display(), check.frames);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
