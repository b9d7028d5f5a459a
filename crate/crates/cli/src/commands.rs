use anyhow::{anyhow, bail, Context, Result};
use clap::CommandFactory;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use cuedspeech::corpus::{
    alphabet, generate_synthetic, load_corpus, pseudo_lexicon, read_corpus_header, write_corpus, AlphabetVersion,
    PhonemeAlphabet, SyntheticSpec, Utterance,
};
use cuedspeech::evaluation::{kfold_split, overlap_fraction, EvaluationReport, FoldReport, SplitPlan};
use cuedspeech::features::{FeaturePipeline, STREAM_COMPONENTS};
use cuedspeech::lexicon::{load_lexicon, Lexicon, PrefixTree, TokenPassingConfig};
use cuedspeech::network::{load_checkpoint, save_checkpoint, Architecture, Checkpoint, ModelConfig};
use cuedspeech::pipeline::{decode_with, fit_model, run_fold, score, Decoder, ExperimentConfig, Hypothesis};
use cuedspeech::training::TrainConfig;

use crate::config::FileConfig;
use crate::{
    BiasArgs, Cli, Command, CorpusArgs, DecodeArgs, EvalArgs, FoldArgs, PcaFitArgs, SplitArgs, SynthArgs, TrainArgs,
    TrainFlags,
};

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, &file),
        Command::PcaFit(a) => pca_fit(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Decode(a) => decode(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Split(a) => split(a, &file),
        Command::Bias(a) => bias(a, &file),
    }
}

/// Flag, then config file value.
fn pick<T: Clone>(flag: Option<T>, file: &Option<T>) -> Option<T> {
    flag.or_else(|| file.clone())
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing --{name} (flag or config key)"))
}

fn parse_range(s: &str, name: &str) -> Result<RangeInclusive<usize>> {
    let parse = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad --{name} value {s:?}"));
    match s.split_once('-') {
        Some((a, b)) => Ok(parse(a)?..=parse(b)?),
        None => {
            let v = parse(s)?;
            Ok(v..=v)
        }
    }
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_alphabet(s: &str) -> Result<AlphabetVersion> {
    s.parse().map_err(|e| anyhow!("{e}"))
}

fn parse_arch(s: &str) -> Result<Architecture> {
    s.parse().map_err(|e| anyhow!("{e}"))
}

/// Loads the corpus; the alphabet comes from the flag, the config, the corpus
/// header, or defaults to v1, in that order.
fn load(args: &CorpusArgs, file: &FileConfig) -> Result<(PhonemeAlphabet, Vec<Utterance>, PathBuf)> {
    let path = required(pick(args.corpus.clone(), &file.corpus), "corpus")?;
    let version = match pick(args.alphabet.clone(), &file.alphabet) {
        Some(s) => parse_alphabet(&s)?,
        None => read_corpus_header(&path)?.map_or(AlphabetVersion::V1, |h| h.alphabet),
    };
    let alpha = alphabet(version);
    let utts = load_corpus(&path, &alpha)?;
    if utts.is_empty() {
        bail!("corpus {} has no utterances", path.display());
    }
    Ok((alpha, utts, path))
}

/// Training indices, plus the test fold and its indices when a plan is given.
type FoldSelection = (Vec<usize>, Option<(usize, Vec<usize>)>);

fn fold_indices(args: &FoldArgs, file: &FileConfig, n: usize) -> Result<FoldSelection> {
    match pick(args.split.clone(), &file.split) {
        None => {
            if args.fold.is_some() {
                bail!("--fold needs --split");
            }
            Ok(((0..n).collect(), None))
        }
        Some(p) => {
            let plan: SplitPlan = read_json(&p)?;
            if plan.assignments.len() != n {
                bail!("split plan covers {} utterances, corpus has {n}", plan.assignments.len());
            }
            let fold = required(pick(args.fold, &file.fold), "fold")?;
            if fold >= plan.fold_count {
                bail!("fold {fold} out of range for a {}-fold plan", plan.fold_count);
            }
            Ok((plan.train_indices(fold), Some((fold, plan.test_indices(fold)))))
        }
    }
}

fn synth(a: SynthArgs, file: &FileConfig) -> Result<()> {
    let out = required(pick(a.out, &file.out), "out")?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_sentences: pick(a.sentences, &file.sentences).unwrap_or(d.n_sentences),
        repeats: pick(a.repeats, &file.repeats).unwrap_or(d.repeats),
        phonemes_per_sentence: match pick(a.phonemes, &file.phonemes) {
            Some(s) => parse_range(&s, "phonemes")?,
            None => d.phonemes_per_sentence,
        },
        frames_per_phoneme: match pick(a.frames_per_phoneme, &file.frames_per_phoneme) {
            Some(s) => parse_range(&s, "frames-per-phoneme")?,
            None => d.frames_per_phoneme,
        },
        hand_lead_frames: match pick(a.hand_lead, &file.hand_lead) {
            Some(s) => parse_range(&s, "hand-lead")?,
            None => d.hand_lead_frames,
        },
        coordinate_noise_std: pick(a.noise, &file.noise).unwrap_or(d.coordinate_noise_std),
        seed: pick(a.seed, &file.seed).unwrap_or(d.seed),
    };
    let version = match pick(a.alphabet, &file.alphabet) {
        Some(s) => parse_alphabet(&s)?,
        None => AlphabetVersion::V1,
    };
    let alpha = alphabet(version);
    let utts = generate_synthetic(&spec, &alpha)?;
    write_corpus(&out, &alpha, &utts)?;
    let lex = Lexicon::from_entries(pseudo_lexicon(&utts, &alpha)?)?;
    let lex_path = a.lexicon_out.unwrap_or_else(|| sibling(&out, "lex.tsv"));
    lex.save(&lex_path, &alpha)?;
    println!(
        "wrote {} utterances ({} symbols, alphabet {version}) to {}, {} words to {}",
        utts.len(),
        alpha.len(),
        out.display(),
        lex.len(),
        lex_path.display()
    );
    Ok(())
}

fn pca_fit(a: PcaFitArgs, file: &FileConfig) -> Result<()> {
    let (_, utts, _) = load(&a.corpus, file)?;
    let out = required(pick(a.out, &file.out), "out")?;
    let (train_idx, _) = fold_indices(&a.fold, file, utts.len())?;
    let train: Vec<&Utterance> = train_idx.iter().map(|&i| &utts[i]).collect();
    let features = FeaturePipeline::fit(&train, STREAM_COMPONENTS)?;
    features.save(&out)?;
    println!(
        "explained variance: lips {:.4}, hand {:.4} ({} components each)",
        features.lips.cumulative_explained_variance(),
        features.hand.cumulative_explained_variance(),
        STREAM_COMPONENTS
    );
    Ok(())
}

fn experiment(t: &TrainFlags, file: &FileConfig, n_phonemes: usize) -> Result<ExperimentConfig> {
    let arch = parse_arch(&pick(t.arch.clone(), &file.arch).unwrap_or_else(|| "three-stream".into()))?;
    let mut model = ModelConfig::new(arch, n_phonemes);
    if let Some(h) = pick(t.stream_hidden, &file.stream_hidden) {
        model.stream_hidden = h;
    }
    if let Some(h) = pick(t.fusion_hidden, &file.fusion_hidden) {
        model.fusion_hidden = h;
    }
    if let Some(h) = pick(t.early_hidden, &file.early_hidden) {
        model.early_hidden = h;
    }
    let d = TrainConfig::default();
    let seed = pick(t.seed, &file.seed).unwrap_or(d.seed);
    let train = TrainConfig {
        batch_size: pick(t.batch_size, &file.batch_size).unwrap_or(d.batch_size),
        initial_lr: pick(t.lr, &file.lr).unwrap_or(d.initial_lr),
        lr_halving_patience: pick(t.lr_patience, &file.lr_patience).unwrap_or(d.lr_halving_patience),
        stop_patience: pick(t.patience, &file.patience).unwrap_or(d.stop_patience),
        max_epochs: pick(t.epochs, &file.epochs).unwrap_or(d.max_epochs),
        dropout: pick(t.dropout, &file.dropout).unwrap_or(d.dropout),
        grad_clip: pick(t.grad_clip, &file.grad_clip),
        seed,
        ..d
    };
    train.validate()?;
    Ok(ExperimentConfig {
        model,
        train,
        valid_fraction: pick(t.valid_fraction, &file.valid_fraction).unwrap_or(0.1),
        init_seed: seed,
    })
}

#[derive(Serialize)]
struct TrainReport {
    architecture: Architecture,
    alphabet: AlphabetVersion,
    test_fold: Option<usize>,
    train_utterances: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_valid_loss: f64,
    best_valid_accuracy: f64,
    final_lr: f64,
    parameters: usize,
    config: TrainConfig,
    model: ModelConfig,
}

fn train(a: TrainArgs, file: &FileConfig) -> Result<()> {
    let (alpha, utts, _) = load(&a.corpus, file)?;
    let out = required(pick(a.out, &file.out), "out")?;
    let features_out = a.features_out.unwrap_or_else(|| sibling(&out, "features.json"));
    let log_path = a.log.unwrap_or_else(|| sibling(&out, "log.jsonl"));
    let report_path = a.report.unwrap_or_else(|| sibling(&out, "report.json"));
    let (train_idx, test) = fold_indices(&a.fold, file, utts.len())?;
    let cfg = experiment(&a.train, file, alpha.len())?;
    let train_utts: Vec<&Utterance> = train_idx.iter().map(|&i| &utts[i]).collect();

    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let version = alpha.version();
    let model = fit_model(&train_utts, &cfg, |entry, params| {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(log, "{line}").map_err(|e| cuedspeech::Error::Io {
            path: log_path.clone(),
            source: e,
        })?;
        println!(
            "epoch {:>3}  train {:.4}  valid {:.4}  acc {:.4}  lr {}{}",
            entry.epoch,
            entry.train_loss,
            entry.valid_loss,
            entry.valid_accuracy,
            entry.lr,
            if entry.improved { "  *" } else { "" }
        );
        if entry.improved {
            save_checkpoint(
                &out,
                &Checkpoint {
                    alphabet: version,
                    params: params.clone(),
                },
            )?;
        }
        Ok(())
    })?;
    save_checkpoint(
        &out,
        &Checkpoint {
            alphabet: version,
            params: model.params.clone(),
        },
    )?;
    model.features.save(&features_out)?;
    let best = &model.logs[model.best_epoch - 1];
    let report = TrainReport {
        architecture: cfg.model.architecture,
        alphabet: version,
        test_fold: test.as_ref().map(|(f, _)| *f),
        train_utterances: train_utts.len(),
        epochs_run: model.logs.len(),
        best_epoch: model.best_epoch,
        best_valid_loss: best.valid_loss,
        best_valid_accuracy: best.valid_accuracy,
        final_lr: model.logs.last().expect("one epoch").lr,
        parameters: model.params.parameter_count(),
        config: cfg.train.clone(),
        model: cfg.model,
    };
    write_json(&report_path, &report)?;
    println!(
        "best epoch {} (valid loss {:.4}); checkpoint {}",
        model.best_epoch,
        best.valid_loss,
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct HypothesisRecord {
    id: String,
    phonemes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    words: Option<Vec<String>>,
}

fn decode(a: DecodeArgs, file: &FileConfig) -> Result<()> {
    let mode = pick(a.decode, &file.decode).unwrap_or_else(|| "greedy".into());
    let lexicon_path = pick(a.lexicon, &file.lexicon);
    if mode == "lexicon" && lexicon_path.is_none() {
        Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, "--decode lexicon requires --lexicon")
            .exit();
    }
    let (alpha, utts, _) = load(&a.corpus, file)?;
    let model_path = required(pick(a.model, &file.model), "model")?;
    let ckpt = load_checkpoint(&model_path)?;
    if ckpt.alphabet != alpha.version() {
        bail!("model uses alphabet {}, corpus uses {}", ckpt.alphabet, alpha.version());
    }
    let features_path = pick(a.features, &file.features).unwrap_or_else(|| sibling(&model_path, "features.json"));
    let features = FeaturePipeline::load(&features_path)?;
    let out = required(pick(a.out, &file.out), "out")?;
    let (_, test) = fold_indices(&a.fold, file, utts.len())?;
    let targets: Vec<&Utterance> = match &test {
        Some((_, idx)) => idx.iter().map(|&i| &utts[i]).collect(),
        None => utts.iter().collect(),
    };
    let tree;
    let decoder = if mode == "lexicon" {
        let lex = load_lexicon(lexicon_path.as_ref().expect("checked above"), &alpha)?;
        tree = PrefixTree::new(&lex, alpha.len())?;
        let d = TokenPassingConfig::default();
        Decoder::Lexicon(
            &tree,
            TokenPassingConfig {
                beam_width: pick(a.beam, &file.beam).unwrap_or(d.beam_width),
                word_insertion_penalty: pick(a.word_penalty, &file.word_penalty).unwrap_or(d.word_insertion_penalty),
            },
        )
    } else {
        Decoder::Greedy
    };
    let hyps = decode_with(&features, &ckpt.params, &targets, &decoder)?;
    let mut text = String::new();
    for h in &hyps {
        let rec = HypothesisRecord {
            id: h.id.clone(),
            phonemes: alpha.labels(&h.phonemes),
            words: h.words.clone(),
        };
        text.push_str(&serde_json::to_string(&rec)?);
        text.push('\n');
    }
    fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("decoded {} utterances ({mode}) to {}", hyps.len(), out.display());
    Ok(())
}

fn read_hypotheses(path: &Path, alpha: &PhonemeAlphabet) -> Result<Vec<Hypothesis>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: HypothesisRecord =
                serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            Ok(Hypothesis {
                id: rec.id,
                phonemes: alpha.parse_labels(&rec.phonemes)?,
                words: rec.words,
            })
        })
        .collect()
}

fn eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let (alpha, utts, _) = load(&a.corpus, file)?;
    let plan: Option<SplitPlan> = match pick(a.split, &file.split) {
        Some(p) => Some(read_json(&p)?),
        None => None,
    };
    if !a.folds.is_empty() && a.folds.len() != a.hyps.len() {
        bail!("--folds lists {} folds for {} hypothesis files", a.folds.len(), a.hyps.len());
    }
    let mut reports = Vec::new();
    for (i, path) in a.hyps.iter().enumerate() {
        let fold = a.folds.get(i).copied().unwrap_or(i);
        let refs: Vec<&Utterance> = match &plan {
            Some(p) => {
                if p.assignments.len() != utts.len() {
                    bail!("split plan covers {} utterances, corpus has {}", p.assignments.len(), utts.len());
                }
                if fold >= p.fold_count {
                    bail!("fold {fold} out of range for a {}-fold plan", p.fold_count);
                }
                p.test_indices(fold).into_iter().map(|j| &utts[j]).collect()
            }
            None => utts.iter().collect(),
        };
        let hyps = read_hypotheses(path, &alpha)?;
        let report = score(fold, &refs, &hyps).with_context(|| format!("scoring {}", path.display()))?;
        println!(
            "fold {:>2}: N={} D={} S={} I={}  accuracy {:.4}  95% [{:.4}, {:.4}]{}",
            report.fold,
            report.stats.n_ref,
            report.stats.deletions,
            report.stats.substitutions,
            report.stats.insertions,
            report.accuracy,
            report.wilson_low,
            report.wilson_high,
            report
                .word_correctness
                .map(|w| format!("  word correctness {w:.4}"))
                .unwrap_or_default()
        );
        reports.push(report);
    }
    let summary = EvaluationReport::new(reports)?;
    println!(
        "accuracy min {:.4}  mean {:.4}  max {:.4}",
        summary.min_accuracy, summary.mean_accuracy, summary.max_accuracy
    );
    if let Some(out) = pick(a.out, &file.out) {
        write_json(&out, &summary)?;
    }
    Ok(())
}

fn split(a: SplitArgs, file: &FileConfig) -> Result<()> {
    let (_, utts, _) = load(&a.corpus, file)?;
    let k = pick(a.k, &file.k).unwrap_or(10);
    let shuffled = a.shuffled || file.shuffled.unwrap_or(false);
    let seed = pick(a.seed, &file.seed).unwrap_or(1);
    let plan = kfold_split(utts.len(), k, shuffled, seed)?;
    let out = required(pick(a.out, &file.out), "out")?;
    write_json(&out, &plan)?;
    let texts: Vec<&str> = utts.iter().map(|u| u.text.as_str()).collect();
    for f in 0..k {
        println!(
            "fold {f:>2}: {} test utterances, text overlap with training {:.4}",
            plan.test_indices(f).len(),
            overlap_fraction(&plan, &texts, f)?
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct BiasMode {
    shuffled: bool,
    folds: Vec<FoldReport>,
    overlap: Vec<f64>,
    mean_overlap: f64,
    min_accuracy: f64,
    mean_accuracy: f64,
    max_accuracy: f64,
}

#[derive(Serialize)]
struct BiasReport {
    k: usize,
    seed: u64,
    architecture: Architecture,
    utterances: usize,
    ordered: BiasMode,
    shuffled: BiasMode,
    /// Shuffled minus ordered mean accuracy.
    accuracy_difference: f64,
}

fn bias(a: BiasArgs, file: &FileConfig) -> Result<()> {
    let (alpha, utts, _) = load(&a.corpus, file)?;
    let k = pick(a.k, &file.k).unwrap_or(10);
    let cfg = experiment(&a.train, file, alpha.len())?;
    let texts: Vec<&str> = utts.iter().map(|u| u.text.as_str()).collect();
    let mut modes = Vec::new();
    for shuffled in [false, true] {
        let plan = kfold_split(utts.len(), k, shuffled, cfg.train.seed)?;
        let mut folds = Vec::new();
        let mut overlap = Vec::new();
        for f in 0..k {
            let report = run_fold(&utts, &plan, f, &cfg)?;
            let ov = overlap_fraction(&plan, &texts, f)?;
            println!(
                "{} fold {f}: accuracy {:.4}, text overlap {:.4}",
                if shuffled { "shuffled" } else { "ordered " },
                report.accuracy,
                ov
            );
            folds.push(report);
            overlap.push(ov);
        }
        let summary = EvaluationReport::new(folds)?;
        modes.push(BiasMode {
            shuffled,
            mean_overlap: overlap.iter().sum::<f64>() / k as f64,
            overlap,
            min_accuracy: summary.min_accuracy,
            mean_accuracy: summary.mean_accuracy,
            max_accuracy: summary.max_accuracy,
            folds: summary.folds,
        });
    }
    let shuffled = modes.pop().expect("two modes");
    let ordered = modes.pop().expect("two modes");
    let report = BiasReport {
        k,
        seed: cfg.train.seed,
        architecture: cfg.model.architecture,
        utterances: utts.len(),
        accuracy_difference: shuffled.mean_accuracy - ordered.mean_accuracy,
        ordered,
        shuffled,
    };
    println!(
        "mean accuracy: ordered {:.4}, shuffled {:.4}, difference {:+.4}",
        report.ordered.mean_accuracy, report.shuffled.mean_accuracy, report.accuracy_difference
    );
    println!(
        "mean text overlap: ordered {:.4}, shuffled {:.4}",
        report.ordered.mean_overlap, report.shuffled.mean_overlap
    );
    if let Some(out) = pick(a.out, &file.out) {
        write_json(&out, &report)?;
    }
    Ok(())
}
