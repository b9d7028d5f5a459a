//! Glue between corpus, features, training and evaluation: holdout and fold
//! experiments as run by the command-line tool.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::corpus::Utterance;
use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::evaluation::{align, correctness, AlignmentStats, FoldReport, SplitPlan};
use crate::features::{FeaturePipeline, STREAM_COMPONENTS};
use crate::lexicon::{token_passing_decode, PrefixTree, TokenPassingConfig};
use crate::network::{ModelConfig, ModelParams};
use crate::training::{train, EpochLog, Sample, TrainConfig};

/// Splits utterance indices into (train, held-out) so that no text appears on
/// both sides. About `fraction` of the distinct texts are held out, chosen by
/// a seeded shuffle; both lists keep corpus order.
pub fn text_disjoint_holdout(texts: &[&str], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("holdout fraction must lie in (0, 1)"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in texts.iter().enumerate() {
        groups.entry(t).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::invalid("need at least two distinct texts for a holdout"));
    }
    let mut keys: Vec<&str> = groups.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((keys.len() as f64 * fraction).round() as usize).clamp(1, keys.len() - 1);
    let mut held = vec![false; texts.len()];
    for k in &keys[..n_hold] {
        for &i in &groups[k] {
            held[i] = true;
        }
    }
    let train = (0..texts.len()).filter(|&i| !held[i]).collect();
    let hold = (0..texts.len()).filter(|&i| held[i]).collect();
    Ok((train, hold))
}

pub fn build_samples(features: &FeaturePipeline, utterances: &[&Utterance]) -> Result<Vec<Sample>> {
    utterances
        .iter()
        .map(|u| {
            Ok(Sample {
                id: u.id.clone(),
                streams: features.streams(u)?,
                labels: u.phonemes.clone(),
            })
        })
        .collect()
}

/// Everything a fold experiment needs besides the data.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Share of training texts held out for early stopping.
    pub valid_fraction: f64,
    pub init_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub features: FeaturePipeline,
    pub params: ModelParams,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Fits features on `train_utts` (minus a text-disjoint validation part) and
/// trains a model.
pub fn fit_model(
    train_utts: &[&Utterance],
    config: &ExperimentConfig,
    on_epoch: impl FnMut(&EpochLog, &ModelParams) -> Result<()>,
) -> Result<TrainedModel> {
    let texts: Vec<&str> = train_utts.iter().map(|u| u.text.as_str()).collect();
    let (tr, va) = text_disjoint_holdout(&texts, config.valid_fraction, config.train.seed)?;
    let tr: Vec<&Utterance> = tr.into_iter().map(|i| train_utts[i]).collect();
    let va: Vec<&Utterance> = va.into_iter().map(|i| train_utts[i]).collect();
    let features = FeaturePipeline::fit(&tr, STREAM_COMPONENTS)?;
    let train_set = build_samples(&features, &tr)?;
    let valid_set = build_samples(&features, &va)?;
    let init = ModelParams::init(config.model, config.init_seed)?;
    let out = train(init, &train_set, &valid_set, &config.train, on_epoch)?;
    Ok(TrainedModel {
        features,
        params: out.best,
        logs: out.logs,
        best_epoch: out.best_epoch,
    })
}

/// Decoding mode for hypotheses.
#[derive(Debug, Clone)]
pub enum Decoder<'a> {
    Greedy,
    Lexicon(&'a PrefixTree, TokenPassingConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub phonemes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub words: Option<Vec<String>>,
}

pub fn decode_utterances(
    model: &TrainedModel,
    utterances: &[&Utterance],
    decoder: &Decoder<'_>,
) -> Result<Vec<Hypothesis>> {
    decode_with(&model.features, &model.params, utterances, decoder)
}

pub fn decode_with(
    features: &FeaturePipeline,
    params: &ModelParams,
    utterances: &[&Utterance],
    decoder: &Decoder<'_>,
) -> Result<Vec<Hypothesis>> {
    utterances
        .iter()
        .map(|u| {
            let (post, _) = params.forward(&features.streams(u)?)?;
            Ok(match decoder {
                Decoder::Greedy => Hypothesis {
                    id: u.id.clone(),
                    phonemes: greedy_decode(&post),
                    words: None,
                },
                Decoder::Lexicon(tree, cfg) => {
                    let d = token_passing_decode(&post, tree, cfg)?;
                    Hypothesis {
                        id: u.id.clone(),
                        phonemes: d.phonemes,
                        words: Some(d.words),
                    }
                }
            })
        })
        .collect()
}

/// Scores hypotheses against references matched by id.
pub fn score(fold: usize, references: &[&Utterance], hypotheses: &[Hypothesis]) -> Result<FoldReport> {
    let by_id: BTreeMap<&str, &Hypothesis> = hypotheses.iter().map(|h| (h.id.as_str(), h)).collect();
    let missing: Vec<&str> = references
        .iter()
        .map(|u| u.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let refs: std::collections::BTreeSet<&str> = references.iter().map(|u| u.id.as_str()).collect();
    let extra: Vec<&str> = by_id.keys().copied().filter(|id| !refs.contains(id)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::invalid(format!(
            "utterance ids differ: missing hypotheses for [{}], unknown hypotheses [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut stats = AlignmentStats::default();
    let mut word_stats = AlignmentStats::default();
    let mut have_words = true;
    for u in references {
        let h = by_id[u.id.as_str()];
        stats = stats + align(&u.phonemes, &h.phonemes);
        match &h.words {
            Some(w) if !u.words.is_empty() => word_stats = word_stats + align(&u.words, w),
            _ => have_words = false,
        }
    }
    let wc = if have_words && word_stats.n_ref > 0 {
        Some(correctness(&word_stats)?)
    } else {
        None
    };
    FoldReport::new(fold, references.len(), stats, wc)
}

/// Trains on every fold but `fold` and scores greedy decoding on `fold`.
pub fn run_fold(utterances: &[Utterance], plan: &SplitPlan, fold: usize, config: &ExperimentConfig) -> Result<FoldReport> {
    if plan.assignments.len() != utterances.len() {
        return Err(Error::DimensionMismatch {
            context: "split plan size",
            expected: utterances.len(),
            actual: plan.assignments.len(),
        });
    }
    let train_utts: Vec<&Utterance> = plan.train_indices(fold).into_iter().map(|i| &utterances[i]).collect();
    let test_utts: Vec<&Utterance> = plan.test_indices(fold).into_iter().map(|i| &utterances[i]).collect();
    let model = fit_model(&train_utts, config, |_, _| Ok(()))?;
    let hyps = decode_utterances(&model, &test_utts, &Decoder::Greedy)?;
    score(fold, &test_utts, &hyps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_is_text_disjoint_and_deterministic() {
        let texts: Vec<String> = (0..40).map(|i| format!("t{}", i / 2)).collect();
        let t: Vec<&str> = texts.iter().map(String::as_str).collect();
        let (a, b) = text_disjoint_holdout(&t, 0.1, 3).unwrap();
        assert_eq!(a.len() + b.len(), 40);
        assert_eq!(b.len(), 4);
        for &i in &b {
            assert!(a.iter().all(|&j| texts[j] != texts[i]));
        }
        assert_eq!(text_disjoint_holdout(&t, 0.1, 3).unwrap(), (a, b));
        assert!(text_disjoint_holdout(&t, 0.0, 3).is_err());
    }
}
