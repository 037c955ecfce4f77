use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use duet_lab::commands::{cmd_ambiguity, cmd_bound, cmd_generate, cmd_heatmap, cmd_probe, cmd_recover, cmd_train, Report};
use duet_lab::{LabResult, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Train,
    Probe,
    Heatmap,
    Recover,
    Ambiguity,
    Bound,
    Generate,
}

/// Train and analyze group-structured self-supervised representations.
#[derive(Debug, Parser)]
#[command(name = "duet-lab", version)]
struct Cli {
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> LabResult<Report> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Probe => cmd_probe(&cfg),
        Command::Heatmap => cmd_heatmap(&cfg),
        Command::Recover => cmd_recover(&cfg),
        Command::Ambiguity => cmd_ambiguity(&cfg),
        Command::Bound => cmd_bound(&cfg),
        Command::Generate => cmd_generate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            let mut out = std::io::stdout().lock();
            for line in &report.lines {
                let _ = writeln!(out, "{line}");
            }
            for f in &report.files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("duet-lab: {e}");
            ExitCode::FAILURE
        }
    }
}
