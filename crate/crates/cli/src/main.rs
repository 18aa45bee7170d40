use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod report;

#[derive(Parser)]
#[command(name = "simcurl", version, about = "User representations from command histories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with labels and true session boundaries.
    Gen {
        /// Run configuration (key = value lines); defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the corpus seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment a corpus into sessions by activity density.
    Segment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Contrastively pretrain the encoder on a corpus.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        /// Precomputed sessions; segmented from the config when absent.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a linear probe on a frozen encoder checkpoint and save it.
    Probe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Encoder checkpoint manifest (blob sits next to it).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a feature method with linear probes and write the report.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Encoder checkpoint manifest; required unless --baseline is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Score a baseline instead of a checkpoint: bow, cfiuf, or
        /// random-encoder.
        #[arg(long)]
        baseline: Option<String>,
        /// Also report scores after merging experience levels to three
        /// classes.
        #[arg(long)]
        merge_classes: bool,
        /// Fraction of training labels available to the probe.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Consolidate evaluation artifacts under a run directory into the four
    /// result tables.
    Report {
        run_dir: PathBuf,
        /// Directory for the tables; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Consolidate even when artifacts carry different fingerprints.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out, seed } => commands::cmd_gen(config.as_deref(), &out, seed),
        Command::Segment { corpus, config, out, seed } => {
            commands::cmd_segment(&corpus, config.as_deref(), &out, seed)
        }
        Command::Pretrain { corpus, sessions, config, out, seed } => {
            commands::cmd_pretrain(&corpus, sessions.as_deref(), config.as_deref(), &out, seed)
        }
        Command::Probe { corpus, labels, checkpoint, sessions, config, out, seed } => {
            commands::cmd_probe(
                &corpus,
                &labels,
                &checkpoint,
                sessions.as_deref(),
                config.as_deref(),
                &out,
                seed,
            )
        }
        Command::Eval {
            corpus,
            labels,
            checkpoint,
            sessions,
            config,
            out,
            seed,
            baseline,
            merge_classes,
            fraction,
        } => commands::cmd_eval(commands::EvalArgs {
            corpus: &corpus,
            labels: &labels,
            checkpoint: checkpoint.as_deref(),
            sessions: sessions.as_deref(),
            config: config.as_deref(),
            out: &out,
            seed,
            baseline: baseline.as_deref(),
            merge_classes,
            fraction,
        }),
        Command::Report { run_dir, out, force } => {
            report::cmd_report(&run_dir, out.as_deref().unwrap_or(&run_dir), force)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = e.to_string().replace('\n', "; ");
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
