//! Optional TOML run configuration. Every key mirrors a command-line flag
//! (with `_` for `-`); a flag given on the command line always wins.
//!
//! ```toml
//! seed = 1
//! alphabet = "v1"
//! arch = "three-stream"
//! decode = "greedy"
//! corpus = "data/corpus.jsonl"
//! sentences = 200
//! repeats = 2
//! phonemes = "4-8"
//! frames_per_phoneme = "4-10"
//! hand_lead = "0-6"
//! noise = 0.01
//! epochs = 100
//! batch_size = 16
//! lr = 0.001
//! lr_patience = 5
//! patience = 10
//! stream_hidden = 128
//! fusion_hidden = 256
//! early_hidden = 128
//! beam = 64
//! word_penalty = 0.0
//! k = 10
//! ```

use anyhow::{Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub alphabet: Option<String>,
    pub arch: Option<String>,
    pub decode: Option<String>,
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fold: Option<usize>,
    pub sentences: Option<usize>,
    pub repeats: Option<usize>,
    pub phonemes: Option<String>,
    pub frames_per_phoneme: Option<String>,
    pub hand_lead: Option<String>,
    pub noise: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_patience: Option<usize>,
    pub patience: Option<usize>,
    pub valid_fraction: Option<f64>,
    pub stream_hidden: Option<usize>,
    pub fusion_hidden: Option<usize>,
    pub early_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub grad_clip: Option<f64>,
    pub beam: Option<usize>,
    pub word_penalty: Option<f64>,
    pub k: Option<usize>,
    pub shuffled: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
