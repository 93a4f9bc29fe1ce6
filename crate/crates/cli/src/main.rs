//! `hmmse`: batch front end for analysis, training, synthesis and
//! resynthesis-based enhancement.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, parse_override, KEYS};

/// Exit status for invalid arguments or configuration.
const EXIT_INVALID: u8 = 1;
/// Exit status for failures while processing valid input.
const EXIT_PROCESSING: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "hmmse", version, about = "HMM-based speech synthesis and resynthesis-based enhancement")]
#[command(after_help = config_help())]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// `key = value` configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Shorthand for `--set seed=N`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shorthand for `--set workers=N`
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate pitch and mel-cepstrum of a waveform
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        f0: PathBuf,
        #[arg(long)]
        mgc: PathBuf,
    },
    /// Analyze and re-synthesize a waveform through the vocoder
    Resynth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an average voice model on paired audio and label directories
    Train {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        lab_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a model to a target speaker's audio and labels
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        lab_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Force-align a label sequence to a waveform
    Align {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize from text (with a lexicon) or from a label file
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, requires = "lexicon", conflicts_with = "labels")]
        text: Option<String>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, required_unless_present = "text")]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-synthesize an observed utterance from model mel-cepstra and side pitch
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        observed: PathBuf,
        /// Pitch track of the clean signal
        #[arg(long, required_unless_present = "side_from_observed", conflicts_with = "side_from_observed")]
        side_f0: Option<PathBuf>,
        /// Take the pitch from the observed signal instead
        #[arg(long)]
        side_from_observed: bool,
        /// Align on this waveform instead of the observed one
        #[arg(long)]
        align_on: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// JSON report of the run
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check an audio/label corpus for missing, empty and faulty files
    CorpusCheck {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        lab_dir: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Objective comparison of a test waveform against a reference
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a spectrogram as CSV and PGM
    Spectrogram {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path; `.csv` and `.pgm` extensions are substituted
        #[arg(long)]
        out: PathBuf,
    },
    /// Degrade a waveform with noise, reverberation or a competing speaker
    Interfere {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        competing: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic toy corpus (wav/, lab/, lexicon.txt)
    ToyCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        utterances: usize,
    },
}

fn config_help() -> String {
    let mut s = String::from("Configuration keys (defaults <- --config file <- --set/--seed/--workers):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<24}{d}\n"));
    }
    s
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INVALID),
            };
        }
    };
    let mut overrides = cli.global.overrides.clone();
    if let Some(seed) = cli.global.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(w) = cli.global.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    let cfg = match load_config(cli.global.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: configuration: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: worker pool: {e}");
            return ExitCode::from(EXIT_PROCESSING);
        }
    };
    match pool.install(|| commands::run(cli.command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invalid() { EXIT_INVALID } else { EXIT_PROCESSING })
        }
    }
}
