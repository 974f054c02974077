//! Command-line entry point wiring corpora, vocabularies, training,
//! translation and analyses into reproducible experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric error (NaN/Inf).

mod commands;
mod config;
mod flags;

use std::fmt;
use std::process::exit;

use decsde_core::decsde::DecSdeError;
use decsde_core::kernel::KernelError;
use decsde_core::nmt::NmtError;
use decsde_core::pipeline::PipelineError;
use decsde_core::segmenter::SegmenterError;
use decsde_core::trainer::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid configuration or shape inconsistency (exit 2).
    Config(String),
    /// Missing/corrupt files, unaligned corpora, stale tables (exit 3).
    Data(String),
    /// NaN/Inf produced during computation (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(d) => write!(f, "config error: {d}"),
            CliError::Data(d) => write!(f, "data error: {d}"),
            CliError::Numeric(d) => write!(f, "numeric error: {d}"),
        }
    }
}

fn from_kernel(e: KernelError) -> CliError {
    match e {
        KernelError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn from_embed(e: DecSdeError) -> CliError {
    match e {
        DecSdeError::Kernel(k) => from_kernel(k),
        DecSdeError::StaleTable { .. } => CliError::Data(e.to_string()),
        DecSdeError::UnknownLanguage(_) | DecSdeError::BadConfig(_) => {
            CliError::Config(e.to_string())
        }
    }
}

fn from_segmenter(e: SegmenterError) -> CliError {
    match e {
        SegmenterError::Io(_) | SegmenterError::Parse { .. } | SegmenterError::EmptyCorpus => {
            CliError::Data(e.to_string())
        }
        SegmenterError::VocabTooSmall { .. } | SegmenterError::InvalidVocab(_) => {
            CliError::Config(e.to_string())
        }
    }
}

fn from_nmt(e: NmtError) -> CliError {
    match e {
        NmtError::Kernel(k) => from_kernel(k),
        NmtError::Embed(d) => from_embed(d),
        other => CliError::Config(other.to_string()),
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Segmenter(s) => from_segmenter(s),
            PipelineError::Chargram(c) => match c {
                decsde_core::chargrams::ChargramError::Io(_)
                | decsde_core::chargrams::ChargramError::Parse { .. } => {
                    CliError::Data(c.to_string())
                }
                decsde_core::chargrams::ChargramError::Kernel(k) => from_kernel(k),
                decsde_core::chargrams::ChargramError::BadNMax(_) => {
                    CliError::Config(c.to_string())
                }
            },
            PipelineError::Embed(d) => from_embed(d),
            PipelineError::Nmt(n) => from_nmt(n),
            PipelineError::Train(t) => CliError::from(t),
            PipelineError::BadSetup(d) => CliError::Config(d),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Nmt(n) => from_nmt(n),
            TrainError::Kernel(k) => from_kernel(k),
            TrainError::Io(_) | TrainError::Corrupt(_) | TrainError::NoData => {
                CliError::Data(e.to_string())
            }
            TrainError::Mismatch(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<NmtError> for CliError {
    fn from(e: NmtError) -> Self {
        from_nmt(e)
    }
}

impl From<DecSdeError> for CliError {
    fn from(e: DecSdeError) -> Self {
        from_embed(e)
    }
}

impl From<SegmenterError> for CliError {
    fn from(e: SegmenterError) -> Self {
        from_segmenter(e)
    }
}

impl From<decsde_core::evalbench::EvalError> for CliError {
    fn from(e: decsde_core::evalbench::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

const USAGE: &str = "\
usage: decsde <command> [--config FILE] [--KEY VALUE]...

commands:
  make-synthetic      generate paired transfer corpora
  build-vocab         train subword/word vocabularies from the corpora
  build-ngrams        build the character n-gram inventory
  train               train a model (add --resume to continue)
  translate           translate a file with a trained model
  precompute          write the precomputed embedding table for a language
  analyze-embeddings  MRR retrieval gain over related word pairs
  eval-bleu           corpus BLEU (optionally rare-word F1)
  bench               train/decode speed of two systems side by side

Flags after --config override config keys (`--embed-mode decsde`,
`--u 16`, `--max-epochs 10`, ...). Exit codes: 0 ok, 2 config error,
3 data error, 4 numeric error.";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "help" {
        println!("{USAGE}");
        return;
    }
    match commands::run(&args[0], &args[1..]) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            exit(e.exit_code());
        }
    }
}
