//! Phoneme alphabets, landmark utterances, corpus files and the synthetic
//! cued-speech generator.

mod io;
pub mod synthetic;

pub use io::{load_corpus, read_corpus_header, write_corpus, CorpusHeader};
pub use synthetic::{generate_synthetic, pseudo_lexicon, SyntheticGeometry, SyntheticSpec};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of 2D lip landmarks per frame.
pub const LIP_POINTS: usize = 42;
/// Number of 2D hand landmarks per frame.
pub const HAND_POINTS: usize = 21;
/// Hand landmark used as the fingertip stream unless a corpus overrides it
/// (index-finger tip in the 21-point hand model).
pub const DEFAULT_FINGERTIP_LANDMARK: usize = 8;
/// Nominal capture rate of the landmark streams.
pub const FRAME_RATE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphabetVersion {
    V1,
    V2,
}

impl fmt::Display for AlphabetVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphabetVersion::V1 => f.write_str("v1"),
            AlphabetVersion::V2 => f.write_str("v2"),
        }
    }
}

impl FromStr for AlphabetVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(AlphabetVersion::V1),
            "v2" => Ok(AlphabetVersion::V2),
            other => Err(Error::invalid(format!("unknown alphabet version {other:?}"))),
        }
    }
}

/// The 14 vowels, in alphabet order.
const VOWELS: [&str; 14] = [
    "a", "e", "e^", "i", "o", "o^", "u", "y", "x", "x^", "a~", "e~", "o~", "x~",
];

/// The 20 consonants of the base inventory, in alphabet order.
const CONSONANTS: [&str; 20] = [
    "p", "t", "k", "b", "d", "g", "m", "n", "l", "r", "f", "s", "s^", "v", "z", "z^", "j", "w",
    "ks", "gz",
];

/// Classes added by the corrected transcription.
const V2_EXTRA: [&str; 3] = ["gn", "ng", "ui"];

/// Ordered phoneme inventory. The CTC blank is not a member; it takes the
/// index just past the last symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeAlphabet {
    version: AlphabetVersion,
    symbols: Vec<String>,
    vowel_flags: Vec<bool>,
}

/// Returns the fixed alphabet for `version`.
pub fn alphabet(version: AlphabetVersion) -> PhonemeAlphabet {
    let mut symbols: Vec<String> = VOWELS.iter().map(|s| s.to_string()).collect();
    let mut vowel_flags = vec![true; VOWELS.len()];
    symbols.extend(CONSONANTS.iter().map(|s| s.to_string()));
    vowel_flags.extend(std::iter::repeat_n(false, CONSONANTS.len()));
    if version == AlphabetVersion::V2 {
        // "ui" is a semi-vowel but is cued with a consonant hand shape.
        symbols.extend(V2_EXTRA.iter().map(|s| s.to_string()));
        vowel_flags.extend(std::iter::repeat_n(false, V2_EXTRA.len()));
    }
    PhonemeAlphabet {
        version,
        symbols,
        vowel_flags,
    }
}

impl PhonemeAlphabet {
    pub fn version(&self) -> AlphabetVersion {
        self.version
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index reserved for the CTC blank; always equal to `len()`.
    pub fn blank_index(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_vowel(&self, index: usize) -> bool {
        self.vowel_flags.get(index).copied().unwrap_or(false)
    }

    pub fn vowel_count(&self) -> usize {
        self.vowel_flags.iter().filter(|v| **v).count()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == label)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn parse_label(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownPhoneme {
            label: label.to_string(),
        })
    }

    /// Maps a whitespace-free list of labels to indices.
    pub fn parse_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.parse_label(l.as_ref())).collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.label(i).unwrap_or("<blank>").to_string())
            .collect()
    }
}

/// One frame of tracked landmarks. Coordinates are interleaved `x, y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CuedFrame {
    pub frame_index: usize,
    /// 42 lip points, flattened to 84 values.
    pub lips: Vec<f64>,
    /// 21 hand points, flattened to 42 values.
    pub hand: Vec<f64>,
    pub fingertip: [f64; 2],
}

impl CuedFrame {
    pub(crate) fn validate(&self, utterance: &str) -> Result<()> {
        let fail = |message: String| Error::MalformedFrame {
            utterance: utterance.to_string(),
            frame: self.frame_index,
            message,
        };
        if self.lips.len() != 2 * LIP_POINTS {
            return Err(fail(format!(
                "expected {} lip values, found {}",
                2 * LIP_POINTS,
                self.lips.len()
            )));
        }
        if self.hand.len() != 2 * HAND_POINTS {
            return Err(fail(format!(
                "expected {} hand values, found {}",
                2 * HAND_POINTS,
                self.hand.len()
            )));
        }
        let all = self
            .lips
            .iter()
            .chain(self.hand.iter())
            .chain(self.fingertip.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite coordinate".to_string()));
        }
        Ok(())
    }
}

/// A recorded (or generated) sentence with its reference transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub words: Vec<String>,
    pub phonemes: Vec<usize>,
    pub frames: Vec<CuedFrame>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, alphabet: &PhonemeAlphabet) -> Result<()> {
        for frame in &self.frames {
            frame.validate(&self.id)?;
        }
        if let Some(&bad) = self.phonemes.iter().find(|&&p| p >= alphabet.len()) {
            return Err(Error::invalid(format!(
                "utterance {}: phoneme index {bad} outside alphabet of {}",
                self.id,
                alphabet.len()
            )));
        }
        if self.frames.len() < self.phonemes.len() {
            return Err(Error::invalid(format!(
                "utterance {}: {} frames for {} phonemes",
                self.id,
                self.frames.len(),
                self.phonemes.len()
            )));
        }
        Ok(())
    }
}
