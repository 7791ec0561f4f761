use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dclust::commands::{self, EvaluateArgs, SeparateArgs};
use dclust::config::RunConfig;
use dclust::error::{AppError, Result};

/// Deep-clustering single-channel source separation.
///
/// Any `--section.key=value` argument overrides the configuration file.
#[derive(Debug, Parser)]
#[command(name = "dclust", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic source grid to `paths.output_dir/<speaker>/`.
    Synth,
    /// Draw a manifest from `paths.source_dir` and write mixtures and
    /// references.
    Mix,
    /// Train an embedding network on `paths.manifest`.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Separate one mixture with a trained checkpoint.
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        /// Reference sources, needed by the oracle segment strategies.
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
        /// Also write each mask as a PGM image.
        #[arg(long)]
        masks: bool,
    },
    /// Score estimates against references and write a CSV report.
    Evaluate {
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long = "estimate")]
        estimates: Vec<PathBuf>,
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
        /// Score every entry of `paths.manifest` using files from these
        /// directories instead.
        #[arg(long)]
        estimates_dir: Option<PathBuf>,
        #[arg(long)]
        references_dir: Option<PathBuf>,
        #[arg(long, default_value = "report.csv")]
        output: PathBuf,
    },
    /// Sparse NMF baseline.
    #[command(subcommand)]
    Nmf(NmfCommand),
    /// Run the numerical oracle suite.
    Selfcheck {
        /// Perturb analytic gradients (verifies the checks can fail).
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

#[derive(Debug, Subcommand)]
enum NmfCommand {
    /// Learn bases for one source from clean recordings.
    Train {
        #[arg(long = "source", required = true)]
        sources: Vec<PathBuf>,
        #[arg(long)]
        source_id: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Separate a mixture with one bases file per source.
    Separate {
        #[arg(long = "bases", required = true)]
        bases: Vec<PathBuf>,
        #[arg(long)]
        mixture: PathBuf,
    },
}

/// Split `--section.key=value` overrides from ordinary arguments.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    args.into_iter().partition(|a| {
        a.strip_prefix("--").and_then(|s| s.split_once('=')).is_some_and(|(k, _)| k.contains('.'))
    })
}

fn run(cli: Cli, overrides: &[String]) -> Result<String> {
    let cfg = RunConfig::load(cli.config.as_deref(), overrides)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&cfg),
        Command::Mix => commands::cmd_mix(&cfg),
        Command::Train { resume, init_from } => commands::cmd_train(&cfg, resume, init_from),
        Command::Separate { checkpoint, mixture, references, masks } => {
            commands::cmd_separate(&cfg, &SeparateArgs { checkpoint, mixture, references, dump_masks: masks })
        }
        Command::Evaluate { mixture, estimates, references, estimates_dir, references_dir, output } => {
            let args = match (mixture, estimates_dir, references_dir) {
                (Some(mixture), None, None) => EvaluateArgs::Single { mixture, estimates, references },
                (None, Some(estimates_dir), Some(references_dir)) => EvaluateArgs::Manifest { estimates_dir, references_dir },
                _ => {
                    return Err(AppError::Usage(
                        "evaluate takes either --mixture with --estimate/--reference lists, or --estimates-dir and --references-dir".into(),
                    ))
                }
            };
            commands::cmd_evaluate(&cfg, &args, &output)
        }
        Command::Nmf(NmfCommand::Train { sources, source_id, output }) => commands::cmd_nmf_train(&cfg, &sources, &source_id, &output),
        Command::Nmf(NmfCommand::Separate { bases, mixture }) => commands::cmd_nmf_separate(&cfg, &bases, &mixture),
        Command::Selfcheck { corrupt_gradient } => commands::cmd_selfcheck(&cfg, corrupt_gradient),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (overrides, args) = split_overrides(std::env::args().collect());
    let outcome = match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, &overrides),
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => Err(AppError::Usage(e.render().to_string().trim().replace('\n', " "))),
    };
    let mut out = std::io::stdout().lock();
    match outcome {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            let _ = writeln!(out, "STATUS: ok");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            let _ = writeln!(out, "STATUS: error {detail}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
