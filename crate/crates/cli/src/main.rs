//! `cuedsr`: batch experiments for landmark-based Cued Speech recognition.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cuedsr", version, about = "Continuous Cued Speech recognition from 2D landmarks")]
pub struct Cli {
    /// TOML file with default values for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic landmark corpus and its pseudo-word lexicon
    Synth(SynthArgs),
    /// Fit the lip/hand PCA models and fingertip statistics
    PcaFit(PcaFitArgs),
    /// Train a recognizer
    Train(TrainArgs),
    /// Decode utterances with a trained model
    Decode(DecodeArgs),
    /// Score hypothesis files against the corpus references
    Eval(EvalArgs),
    /// Write a k-fold split plan
    Split(SplitArgs),
    /// Compare ordered and shuffled k-fold evaluation on a repeated-text corpus
    Bias(BiasArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output corpus file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output lexicon file [default: <out> with extension .lex.tsv]
    #[arg(long)]
    pub lexicon_out: Option<PathBuf>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Phonemes per sentence, as MIN-MAX
    #[arg(long)]
    pub phonemes: Option<String>,
    /// Frames per phoneme, as MIN-MAX
    #[arg(long)]
    pub frames_per_phoneme: Option<String>,
    /// Hand lead over the lips in frames, as MIN-MAX
    #[arg(long)]
    pub hand_lead: Option<String>,
    /// Coordinate noise standard deviation
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["v1", "v2"])]
    pub alphabet: Option<String>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Alphabet version [default: from the corpus header]
    #[arg(long, value_parser = ["v1", "v2"])]
    pub alphabet: Option<String>,
}

#[derive(Args, Debug)]
pub struct FoldArgs {
    /// Split plan written by `split`
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Test fold of the split plan
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PcaFitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fold: FoldArgs,
    /// Output feature file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    #[arg(long, value_parser = ["early-fusion", "two-stream", "three-stream"])]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Non-improving epochs before halving the learning rate
    #[arg(long)]
    pub lr_patience: Option<usize>,
    /// Non-improving epochs before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Share of training texts held out for early stopping
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    #[arg(long)]
    pub stream_hidden: Option<usize>,
    #[arg(long)]
    pub fusion_hidden: Option<usize>,
    #[arg(long)]
    pub early_hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fold: FoldArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output checkpoint (rewritten at every improving epoch)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Feature file [default: <out> with extension .features.json]
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    /// Epoch log, one JSON object per line [default: <out> with extension .log.jsonl]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Training report [default: <out> with extension .report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub fold: FoldArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feature file [default: <model> with extension .features.json]
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, value_parser = ["greedy", "lexicon"])]
    pub decode: Option<String>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub word_penalty: Option<f64>,
    /// Output hypothesis file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Hypothesis files; with --split, the i-th file holds fold i (or the i-th --folds entry)
    #[arg(long = "hyps", required = true)]
    pub hyps: Vec<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// Output report file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Shuffle utterances before cutting folds
    #[arg(long)]
    pub shuffled: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BiasArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
