mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use densenmt::search::BeamConfig;

use commands::ScoreOptions;

#[derive(Parser)]
#[command(
    name = "densenmt",
    version,
    about = "Train and run densely connected convolutional translation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct BeamArgs {
    /// Beam width; 1 decodes greedily.
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Length penalty exponent: hypotheses are ranked by logprob / length^alpha.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Maximum number of generated tokens per sentence.
    #[arg(long = "max-len", default_value_t = 200)]
    max_len: usize,
}

impl From<BeamArgs> for BeamConfig {
    fn from(a: BeamArgs) -> Self {
        BeamConfig {
            beam_size: a.beam,
            length_penalty: a.alpha,
            max_len: a.max_len,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a run config.
    Train {
        /// Run config (`key = value` lines).
        config: PathBuf,
        /// Continue from `last.ckpt` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Translate a file, one sentence per line, to standard output.
    Translate {
        /// Checkpoint; vocabulary and BPE files are read from its directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input text file.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        beam: BeamArgs,
    },
    /// Translate a source file and report BLEU against references.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source text file.
        #[arg(long)]
        src: PathBuf,
        /// Reference translations, line-aligned with the source.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        beam: BeamArgs,
        /// Add-one smoothing for n-gram orders above one.
        #[arg(long)]
        smooth: bool,
        /// Print `key=value` lines instead of the one-line report.
        #[arg(long = "key-values")]
        key_values: bool,
        /// Also write the hypotheses to this file.
        #[arg(long = "hyp-out")]
        hyp_out: Option<PathBuf>,
    },
    /// Print layer widths, attention windows and parameter counts.
    Inspect {
        /// Run config.
        config: PathBuf,
        /// A second run config whose parameter count is compared.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Learn, apply or undo byte-pair encoding.
    Bpe {
        #[command(subcommand)]
        action: BpeCommand,
    },
    /// Merge two training-curve CSV files side by side.
    CompareCurves {
        first: PathBuf,
        second: PathBuf,
        /// Column suffixes for the two curves.
        #[arg(long, num_args = 2, value_names = ["A", "B"], default_values_t = ["a".to_string(), "b".to_string()])]
        labels: Vec<String>,
    },
}

#[derive(Subcommand)]
enum BpeCommand {
    /// Learn merges from whitespace-tokenized text.
    Learn {
        /// Number of merges to learn.
        #[arg(long)]
        merges: usize,
        /// Learn one model over the concatenation of all inputs.
        #[arg(long)]
        joint: bool,
        /// Output BPE model file.
        #[arg(long, short)]
        output: PathBuf,
        /// Training text files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Segment a text file (`-` for standard input).
    Apply {
        /// BPE model file.
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
    },
    /// Join subwords back into words.
    Decode { input: PathBuf },
}

fn run(cli: Cli) -> densenmt::Result<()> {
    match cli.command {
        Command::Train { config, resume } => commands::train(&config, resume),
        Command::Translate {
            checkpoint,
            input,
            beam,
        } => commands::translate(&checkpoint, &input, &beam.into()),
        Command::Score {
            checkpoint,
            src,
            reference,
            beam,
            smooth,
            key_values,
            hyp_out,
        } => commands::score(
            &checkpoint,
            &src,
            &reference,
            &ScoreOptions {
                beam: beam.into(),
                smooth,
                key_values,
                hyp_out: hyp_out.as_deref(),
            },
        ),
        Command::Inspect { config, compare } => commands::inspect(&config, compare.as_deref()),
        Command::Bpe { action } => match action {
            BpeCommand::Learn {
                merges,
                joint,
                output,
                inputs,
            } => commands::bpe_learn(&inputs, merges, joint, &output),
            BpeCommand::Apply { model, input } => commands::bpe_apply(&model, &input),
            BpeCommand::Decode { input } => commands::bpe_decode(&input),
        },
        Command::CompareCurves { first, second, labels } => {
            commands::compare_curves(&first, &second, (&labels[0], &labels[1]))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
