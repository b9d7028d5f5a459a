//! Synthetic cued-speech corpora.
//!
//! Every phoneme is rendered as a lip template plus a hand key: consonants
//! select one of eight hand shapes (held at the side position), vowels select
//! one of five hand positions (held with the open-hand shape). The hand key for
//! a phoneme switches on `hand_lead` frames before the matching lip template,
//! which reproduces the hand-ahead-of-lips asynchrony of real cueing.
//!
//! The phoneme-to-key assignment below loosely follows the French chart but is
//! otherwise arbitrary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::{BTreeMap, HashSet};
use std::ops::RangeInclusive;

use super::{CuedFrame, PhonemeAlphabet, Utterance, DEFAULT_FINGERTIP_LANDMARK, FRAME_RATE, HAND_POINTS, LIP_POINTS};
use crate::error::{Error, Result};

pub const HAND_SHAPES: usize = 8;
pub const HAND_POSITIONS: usize = 5;
/// Shape used while cueing an isolated vowel.
const VOWEL_SHAPE: usize = 4;
/// Position used while cueing an isolated consonant.
const CONSONANT_POSITION: usize = 0;
const TRAILING_REST_FRAMES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_sentences: usize,
    pub repeats: usize,
    pub phonemes_per_sentence: RangeInclusive<usize>,
    pub frames_per_phoneme: RangeInclusive<usize>,
    pub hand_lead_frames: RangeInclusive<usize>,
    pub coordinate_noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_sentences: 200,
            repeats: 2,
            phonemes_per_sentence: 4..=8,
            frames_per_phoneme: 4..=10,
            hand_lead_frames: 0..=6,
            coordinate_noise_std: 0.01,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.phonemes_per_sentence.is_empty()
            || self.frames_per_phoneme.is_empty()
            || self.hand_lead_frames.is_empty()
        {
            return Err(Error::invalid("synthetic ranges must be non-empty"));
        }
        if *self.phonemes_per_sentence.start() < 1 || *self.frames_per_phoneme.start() < 1 {
            return Err(Error::invalid(
                "phonemes_per_sentence and frames_per_phoneme must start at 1 or more",
            ));
        }
        if !(self.coordinate_noise_std >= 0.0 && self.coordinate_noise_std.is_finite()) {
            return Err(Error::invalid("coordinate_noise_std must be finite and >= 0"));
        }
        Ok(())
    }

    /// Rest frames before the first phoneme; long enough for the largest hand lead.
    pub fn lead_in_frames(&self) -> usize {
        self.hand_lead_frames.end() + 2
    }
}

/// Hand key of a phoneme: a shape and a position index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HandKey {
    pub shape: usize,
    pub position: usize,
}

fn consonant_shape(label: &str) -> usize {
    match label {
        "p" | "d" | "z^" => 0,
        "k" | "v" | "z" => 1,
        "s" | "r" => 2,
        "b" | "n" | "ui" => 3,
        "t" | "m" | "f" => 4,
        "l" | "s^" | "gn" | "w" => 5,
        "g" | "ks" => 6,
        _ => 7, // j, ng, gz
    }
}

fn vowel_position(label: &str) -> usize {
    match label {
        "a" | "o" | "x" => 0,
        "i" | "o~" | "a~" => 1,
        "e^" | "u" | "o^" => 2,
        "e~" | "x^" => 3,
        _ => 4, // e, x~, y
    }
}

/// Finger extension per shape: thumb, index, middle, ring, pinky.
const SHAPE_FINGERS: [[bool; 5]; HAND_SHAPES] = [
    [false, true, false, false, false],
    [false, true, true, false, false],
    [false, false, true, true, true],
    [false, true, true, true, true],
    [true, true, true, true, true],
    [true, true, false, false, false],
    [true, true, true, false, false],
    [true, true, false, false, true],
];

/// Fingertip targets for the five positions, relative to the mouth center:
/// side, mouth corner, chin, cheekbone, throat.
const POSITION_TARGETS: [[f64; 2]; HAND_POSITIONS] = [
    [0.20, 0.00],
    [0.09, 0.00],
    [0.00, 0.09],
    [0.10, -0.09],
    [0.00, 0.22],
];
/// Index tip relative to the wrist for a pointing hand; positions place the
/// wrist so that this point lands on the target.
const POINTING_TIP: [f64; 2] = [-0.045, -0.128];
const REST_WRIST: [f64; 2] = [0.24, 0.3];

const FINGER_BASES: [[f64; 2]; 5] = [
    [-0.02, -0.01],
    [-0.03, -0.06],
    [-0.01, -0.065],
    [0.01, -0.06],
    [0.03, -0.05],
];
const FINGER_DIRS: [[f64; 2]; 5] = [
    [-0.97, -0.24],
    [-0.26, -0.97],
    [-0.10, -0.99],
    [0.05, -1.0],
    [0.25, -0.97],
];

fn hand_shape_template(shape: usize) -> Vec<f64> {
    let mut pts = vec![0.0; 2 * HAND_POINTS];
    // landmark 0 is the wrist at the origin
    for finger in 0..5 {
        let base = FINGER_BASES[finger];
        let dir = FINGER_DIRS[finger];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        let dir = [dir[0] / norm, dir[1] / norm];
        let reach: [f64; 4] = if SHAPE_FINGERS[shape][finger] {
            [0.0, 0.03, 0.05, 0.068]
        } else {
            [0.0, 0.02, 0.008, -0.012]
        };
        for (joint, r) in reach.iter().enumerate() {
            let idx = 1 + 4 * finger + joint;
            pts[2 * idx] = base[0] + dir[0] * r;
            pts[2 * idx + 1] = base[1] + dir[1] * r;
        }
    }
    pts
}

#[derive(Debug, Clone, Copy)]
struct LipParams {
    open: f64,
    width: f64,
    round: f64,
    h2: f64,
    h4: f64,
}

const OUTER_LIP_POINTS: usize = 22;
const INNER_LIP_POINTS: usize = LIP_POINTS - OUTER_LIP_POINTS;

/// Lip contour centered on the mouth center (its centroid is exactly zero).
fn lip_template(p: LipParams) -> Vec<f64> {
    let mut pts = Vec::with_capacity(2 * LIP_POINTS);
    let squeeze = 1.0 - 0.3 * p.round;
    let contour = |pts: &mut Vec<f64>, n: usize, rx: f64, ry: f64| {
        for k in 0..n {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let radial = 1.0 + p.h2 * (2.0 * theta).cos() + p.h4 * (4.0 * theta).cos();
            pts.push(rx * theta.cos() * radial);
            pts.push(ry * theta.sin() * radial);
        }
    };
    contour(&mut pts, OUTER_LIP_POINTS, 0.15 * p.width * squeeze, 0.055 + 0.07 * p.open);
    contour(&mut pts, INNER_LIP_POINTS, 0.12 * p.width * squeeze, 0.004 + 0.085 * p.open);
    pts
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The prototype geometry behind a synthetic corpus. All templates are
/// relative to the mouth center of the frame.
#[derive(Debug, Clone)]
pub struct SyntheticGeometry {
    /// Per-phoneme lip templates (84 values each).
    pub lip_templates: Vec<Vec<f64>>,
    pub rest_lips: Vec<f64>,
    /// Hand-shape templates relative to the wrist (42 values each).
    pub hand_shapes: Vec<Vec<f64>>,
    /// Wrist offsets for the five positions.
    pub position_offsets: [[f64; 2]; HAND_POSITIONS],
    pub rest_hand: Vec<f64>,
    /// Hand key of every phoneme.
    pub keys: Vec<HandKey>,
}

/// Minimum lip distance between phonemes. Phonemes that share a hand key
/// must be told apart by the lips alone, so they sit further apart.
const MIN_LIP_SEPARATION: f64 = 0.1;
const MIN_LIP_SEPARATION_SAME_KEY: f64 = 0.3;

impl SyntheticGeometry {
    /// Builds prototypes for `alphabet`. Lip templates depend on `seed`; the
    /// hand shapes and positions are fixed.
    pub fn new(alphabet: &PhonemeAlphabet, seed: u64) -> Self {
        let keys: Vec<HandKey> = (0..alphabet.len())
            .map(|i| {
                let label = alphabet.label(i).expect("index in range");
                if alphabet.is_vowel(i) {
                    HandKey {
                        shape: VOWEL_SHAPE,
                        position: vowel_position(label),
                    }
                } else {
                    HandKey {
                        shape: consonant_shape(label),
                        position: CONSONANT_POSITION,
                    }
                }
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed11_b50f_c0de);
        let mut lip_templates: Vec<Vec<f64>> = Vec::with_capacity(alphabet.len());
        for key in &keys {
            // Margin: smallest distance to an earlier template over the required one.
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _attempt in 0..2000 {
                let candidate = lip_template(LipParams {
                    open: rng.random_range(0.0..1.0),
                    width: rng.random_range(0.6..1.4),
                    round: rng.random_range(0.0..1.0),
                    h2: rng.random_range(-0.2..0.2),
                    h4: rng.random_range(-0.12..0.12),
                });
                let margin = lip_templates
                    .iter()
                    .zip(&keys)
                    .map(|(t, k)| {
                        let need = if k == key {
                            MIN_LIP_SEPARATION_SAME_KEY
                        } else {
                            MIN_LIP_SEPARATION
                        };
                        squared_distance(t, &candidate).sqrt() / need
                    })
                    .fold(f64::INFINITY, f64::min);
                if margin >= 1.0 {
                    best = Some((margin, candidate));
                    break;
                }
                if best.as_ref().is_none_or(|(m, _)| margin > *m) {
                    best = Some((margin, candidate));
                }
            }
            lip_templates.push(best.expect("at least one attempt").1);
        }
        let rest_lips = lip_template(LipParams {
            open: 0.0,
            width: 1.0,
            round: 0.1,
            h2: 0.0,
            h4: 0.0,
        });
        let hand_shapes: Vec<Vec<f64>> = (0..HAND_SHAPES).map(hand_shape_template).collect();
        let mut position_offsets = [[0.0; 2]; HAND_POSITIONS];
        for (offset, target) in position_offsets.iter_mut().zip(POSITION_TARGETS) {
            *offset = [target[0] - POINTING_TIP[0], target[1] - POINTING_TIP[1]];
        }
        let rest_hand = translate(&hand_shapes[VOWEL_SHAPE], REST_WRIST);
        SyntheticGeometry {
            lip_templates,
            rest_lips,
            hand_shapes,
            position_offsets,
            rest_hand,
            keys,
        }
    }

    /// Hand landmarks (relative to the mouth center) for a hand key.
    pub fn hand_for_key(&self, key: HandKey) -> Vec<f64> {
        translate(&self.hand_shapes[key.shape], self.position_offsets[key.position])
    }

    /// Hand landmarks (relative to the mouth center) cueing `phoneme`.
    pub fn hand_for_phoneme(&self, phoneme: usize) -> Vec<f64> {
        self.hand_for_key(self.keys[phoneme])
    }
}

fn translate(points: &[f64], by: [f64; 2]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, v)| v + by[i % 2])
        .collect()
}

/// Draws a phoneme sequence without immediate repetitions.
fn draw_sentence(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, n_symbols: usize) -> Vec<usize> {
    let len = rng.random_range(spec.phonemes_per_sentence.clone());
    let mut seq: Vec<usize> = Vec::with_capacity(len);
    while seq.len() < len {
        let p = rng.random_range(0..n_symbols);
        if seq.last() != Some(&p) || n_symbols == 1 {
            seq.push(p);
        }
    }
    seq
}

/// Splits a phoneme sequence into pseudo-words of two to four phonemes (a
/// one-phoneme sentence yields a single one-phoneme word).
fn chunk_words(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut remaining = len;
    while remaining > 0 {
        let size = if remaining <= 4 {
            remaining
        } else {
            rng.random_range(2..=4.min(remaining - 2))
        };
        sizes.push(size);
        remaining -= size;
    }
    sizes
}

/// Name of the pseudo-word pronounced as `phonemes`.
fn word_name(alphabet: &PhonemeAlphabet, phonemes: &[usize]) -> String {
    alphabet.labels(phonemes).join("_")
}

struct SentencePlan {
    phonemes: Vec<usize>,
    word_sizes: Vec<usize>,
}

/// Generates `n_sentences * repeats` utterances. Repeats of a sentence are
/// adjacent in the output and share references but not noise or timing.
pub fn generate_synthetic(spec: &SyntheticSpec, alphabet: &PhonemeAlphabet) -> Result<Vec<Utterance>> {
    spec.validate()?;
    if alphabet.is_empty() {
        return Err(Error::invalid("alphabet is empty"));
    }
    let geometry = SyntheticGeometry::new(alphabet, spec.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut plans = Vec::with_capacity(spec.n_sentences);
    let mut texts = HashSet::new();
    let mut attempts = 0usize;
    while plans.len() < spec.n_sentences {
        let phonemes = draw_sentence(&mut rng, spec, alphabet.len());
        let word_sizes = chunk_words(&mut rng, phonemes.len());
        let text = sentence_text(alphabet, &phonemes, &word_sizes).join(" ");
        attempts += 1;
        if texts.insert(text) {
            plans.push(SentencePlan {
                phonemes,
                word_sizes,
            });
        } else if attempts > 1000 * spec.n_sentences.max(1) {
            return Err(Error::invalid(
                "cannot draw enough distinct sentences for this spec",
            ));
        }
    }

    let noise = Normal::new(0.0, spec.coordinate_noise_std.max(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let mut utterances = Vec::with_capacity(spec.n_sentences * spec.repeats);
    for (s, plan) in plans.iter().enumerate() {
        let words = sentence_text(alphabet, &plan.phonemes, &plan.word_sizes);
        let text = words.join(" ");
        for r in 0..spec.repeats {
            let frames = render(&mut rng, &noise, spec, &geometry, &plan.phonemes);
            utterances.push(Utterance {
                id: format!("s{s:04}_r{r}"),
                text: text.clone(),
                words: words.clone(),
                phonemes: plan.phonemes.clone(),
                frames,
            });
        }
    }
    Ok(utterances)
}

fn sentence_text(alphabet: &PhonemeAlphabet, phonemes: &[usize], sizes: &[usize]) -> Vec<String> {
    let mut words = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &size in sizes {
        words.push(word_name(alphabet, &phonemes[at..at + size]));
        at += size;
    }
    words
}

/// Per-frame state of one articulator: rest or a phoneme index.
fn timeline(boundaries: &[usize], phonemes: &[usize], total: usize) -> Vec<Option<usize>> {
    let mut states = vec![None; total];
    for (i, &p) in phonemes.iter().enumerate() {
        for state in states.iter_mut().take(boundaries[i + 1]).skip(boundaries[i]) {
            *state = Some(p);
        }
    }
    states
}

fn render(
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    spec: &SyntheticSpec,
    geometry: &SyntheticGeometry,
    phonemes: &[usize],
) -> Vec<CuedFrame> {
    let lead_in = spec.lead_in_frames();
    let mut lip_bounds = Vec::with_capacity(phonemes.len() + 1);
    lip_bounds.push(lead_in);
    for _ in phonemes {
        let d = rng.random_range(spec.frames_per_phoneme.clone());
        lip_bounds.push(lip_bounds.last().unwrap() + d);
    }
    let total = lip_bounds.last().unwrap() + TRAILING_REST_FRAMES;

    let mut hand_bounds: Vec<usize> = Vec::with_capacity(lip_bounds.len());
    for &b in &lip_bounds {
        let lead = rng.random_range(spec.hand_lead_frames.clone());
        let mut hb = b.saturating_sub(lead);
        if let Some(&prev) = hand_bounds.last() {
            hb = hb.max(prev + 1);
        }
        hand_bounds.push(hb);
    }

    let lips_state = timeline(&lip_bounds, phonemes, total);
    let hand_state = timeline(&hand_bounds, phonemes, total);

    // The face sits at a per-recording offset and sways slowly.
    let offset = [rng.random_range(-0.18..0.18), rng.random_range(-0.18..0.18)];
    let sway_phase = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let sway_period = FRAME_RATE * rng.random_range(1.5..3.0);

    let hand_templates: Vec<Vec<f64>> = (0..geometry.keys.len())
        .map(|p| geometry.hand_for_phoneme(p))
        .collect();

    (0..total)
        .map(|t| {
            let angle = std::f64::consts::TAU * t as f64 / sway_period;
            let mouth = [
                0.47 + offset[0] + 0.015 * (angle + sway_phase[0]).sin(),
                0.41 + offset[1] + 0.01 * (angle + sway_phase[1]).sin(),
            ];
            let lips_rel = match lips_state[t] {
                Some(p) => &geometry.lip_templates[p],
                None => &geometry.rest_lips,
            };
            let hand_rel = match hand_state[t] {
                Some(p) => &hand_templates[p],
                None => &geometry.rest_hand,
            };
            let mut place = |rel: &[f64]| -> Vec<f64> {
                rel.iter()
                    .enumerate()
                    .map(|(i, v)| mouth[i % 2] + v + noise.sample(rng))
                    .collect()
            };
            let lips = place(lips_rel);
            let hand = place(hand_rel);
            let k = DEFAULT_FINGERTIP_LANDMARK;
            CuedFrame {
                frame_index: t,
                fingertip: [hand[2 * k], hand[2 * k + 1]],
                lips,
                hand,
            }
        })
        .collect()
}

/// Pseudo-lexicon induced by a synthetic corpus: every distinct word with its
/// pronunciation, sorted by word.
pub fn pseudo_lexicon(
    utterances: &[Utterance],
    alphabet: &PhonemeAlphabet,
) -> Result<Vec<(String, Vec<usize>)>> {
    let mut entries: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for utt in utterances {
        for word in &utt.words {
            if entries.contains_key(word) {
                continue;
            }
            let labels: Vec<&str> = word.split('_').collect();
            let pron = alphabet.parse_labels(&labels)?;
            entries.insert(word.clone(), pron);
        }
    }
    Ok(entries.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{alphabet, AlphabetVersion};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_sentences: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts_and_repeats() {
        let a = alphabet(AlphabetVersion::V1);
        let utts = generate_synthetic(&small_spec(), &a).unwrap();
        assert_eq!(utts.len(), 10);
        let texts: HashSet<_> = utts.iter().map(|u| u.text.clone()).collect();
        assert_eq!(texts.len(), 5);
        for pair in utts.chunks(2) {
            assert_eq!(pair[0].text, pair[1].text);
            assert_eq!(pair[0].phonemes, pair[1].phonemes);
            assert_ne!(pair[0].frames, pair[1].frames);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = alphabet(AlphabetVersion::V2);
        let x = generate_synthetic(&small_spec(), &a).unwrap();
        let y = generate_synthetic(&small_spec(), &a).unwrap();
        assert_eq!(x, y);
        let z = generate_synthetic(&SyntheticSpec { seed: 2, ..small_spec() }, &a).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn words_concatenate_to_phonemes() {
        let a = alphabet(AlphabetVersion::V1);
        let utts = generate_synthetic(&small_spec(), &a).unwrap();
        let lex: BTreeMap<_, _> = pseudo_lexicon(&utts, &a).unwrap().into_iter().collect();
        for u in &utts {
            let concat: Vec<usize> = u.words.iter().flat_map(|w| lex[w].clone()).collect();
            assert_eq!(concat, u.phonemes);
            for w in &u.words {
                let n = lex[w].len();
                assert!((2..=4).contains(&n), "word {w} has {n} phonemes");
            }
        }
    }

    #[test]
    fn all_frames_are_valid() {
        let a = alphabet(AlphabetVersion::V1);
        for u in generate_synthetic(&small_spec(), &a).unwrap() {
            u.validate(&a).unwrap();
            assert_eq!(u.frames.len(), u.frames.last().unwrap().frame_index + 1);
            for f in &u.frames {
                let k = DEFAULT_FINGERTIP_LANDMARK;
                assert_eq!(f.fingertip, [f.hand[2 * k], f.hand[2 * k + 1]]);
            }
        }
    }

    #[test]
    fn lip_templates_centered() {
        let a = alphabet(AlphabetVersion::V1);
        let g = SyntheticGeometry::new(&a, 3);
        for t in g.lip_templates.iter().chain(std::iter::once(&g.rest_lips)) {
            let cx: f64 = t.iter().step_by(2).sum::<f64>() / LIP_POINTS as f64;
            let cy: f64 = t.iter().skip(1).step_by(2).sum::<f64>() / LIP_POINTS as f64;
            assert!(cx.abs() < 1e-12 && cy.abs() < 1e-12);
        }
    }

    #[test]
    fn hand_keys_cover_eight_shapes_and_five_positions() {
        let a = alphabet(AlphabetVersion::V1);
        let g = SyntheticGeometry::new(&a, 1);
        let shapes: HashSet<_> = (0..a.len())
            .filter(|&i| !a.is_vowel(i))
            .map(|i| g.keys[i].shape)
            .collect();
        let positions: HashSet<_> = (0..a.len())
            .filter(|&i| a.is_vowel(i))
            .map(|i| g.keys[i].position)
            .collect();
        assert_eq!(shapes.len(), HAND_SHAPES);
        assert_eq!(positions.len(), HAND_POSITIONS);
    }

    #[test]
    fn invalid_spec_rejected() {
        let a = alphabet(AlphabetVersion::V1);
        let bad = SyntheticSpec {
            repeats: 0,
            ..small_spec()
        };
        assert!(generate_synthetic(&bad, &a).is_err());
        let bad = SyntheticSpec {
            coordinate_noise_std: -1.0,
            ..small_spec()
        };
        assert!(generate_synthetic(&bad, &a).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let bad = SyntheticSpec {
            frames_per_phoneme: 5..=4,
            ..small_spec()
        };
        assert!(generate_synthetic(&bad, &a).is_err());
    }
}
