use cuedspeech::corpus::{
    alphabet, generate_synthetic, load_corpus, pseudo_lexicon, write_corpus, AlphabetVersion, CuedFrame,
    SyntheticGeometry, SyntheticSpec, LIP_POINTS,
};
use cuedspeech::features::{FeaturePipeline, STREAM_COMPONENTS};

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lip templates are centered, so the lip centroid is the mouth center.
fn mouth(frame: &CuedFrame) -> [f64; 2] {
    let mut c = [0.0; 2];
    for (i, v) in frame.lips.iter().enumerate() {
        c[i % 2] += v;
    }
    [c[0] / LIP_POINTS as f64, c[1] / LIP_POINTS as f64]
}

fn relative(points: &[f64], m: [f64; 2]) -> Vec<f64> {
    points.iter().enumerate().map(|(i, v)| v - m[i % 2]).collect()
}

/// Index of the nearest template; `None` when the rest template wins.
fn nearest(x: &[f64], templates: &[Vec<f64>], rest: &[f64]) -> Option<usize> {
    let mut best = (dist2(x, rest), None);
    for (i, t) in templates.iter().enumerate() {
        let d = dist2(x, t);
        if d < best.0 {
            best = (d, Some(i));
        }
    }
    best.1
}

fn onset(states: &[Option<usize>]) -> usize {
    states.iter().position(Option::is_some).expect("a non-rest frame")
}

#[test]
fn hand_leads_lips_by_exactly_three_frames() {
    let a = alphabet(AlphabetVersion::V1);
    let spec = SyntheticSpec {
        n_sentences: 30,
        repeats: 1,
        phonemes_per_sentence: 1..=1,
        hand_lead_frames: 3..=3,
        ..SyntheticSpec::default()
    };
    let g = SyntheticGeometry::new(&a, spec.seed);
    let hands: Vec<Vec<f64>> = (0..a.len()).map(|p| g.hand_for_phoneme(p)).collect();
    for u in generate_synthetic(&spec, &a).unwrap() {
        let lips: Vec<Option<usize>> = u
            .frames
            .iter()
            .map(|f| nearest(&relative(&f.lips, mouth(f)), &g.lip_templates, &g.rest_lips))
            .collect();
        let hand: Vec<Option<usize>> = u
            .frames
            .iter()
            .map(|f| nearest(&relative(&f.hand, mouth(f)), &hands, &g.rest_hand))
            .collect();
        assert_eq!(onset(&lips), onset(&hand) + 3, "utterance {}", u.id);
        assert_eq!(lips[onset(&lips)], Some(u.phonemes[0]));
    }
}

#[test]
fn noiseless_synchronous_frames_recover_the_reference() {
    let a = alphabet(AlphabetVersion::V1);
    let spec = SyntheticSpec {
        n_sentences: 40,
        hand_lead_frames: 0..=0,
        coordinate_noise_std: 0.0,
        ..SyntheticSpec::default()
    };
    let g = SyntheticGeometry::new(&a, spec.seed);
    let joint: Vec<Vec<f64>> = (0..a.len())
        .map(|p| [g.lip_templates[p].clone(), g.hand_for_phoneme(p)].concat())
        .collect();
    let rest = [g.rest_lips.clone(), g.rest_hand.clone()].concat();
    for u in generate_synthetic(&spec, &a).unwrap() {
        let mut recovered: Vec<usize> = Vec::new();
        let mut prev = None;
        for f in &u.frames {
            let m = mouth(f);
            let x = [relative(&f.lips, m), relative(&f.hand, m)].concat();
            let s = nearest(&x, &joint, &rest);
            if s != prev {
                if let Some(p) = s {
                    recovered.push(p);
                }
            }
            prev = s;
        }
        assert_eq!(recovered, u.phonemes, "utterance {}", u.id);
    }
}

#[test]
fn default_corpus_keeps_ninety_nine_percent_of_variance() {
    let a = alphabet(AlphabetVersion::V1);
    let utts = generate_synthetic(&SyntheticSpec::default(), &a).unwrap();
    let refs: Vec<_> = utts.iter().collect();
    let f = FeaturePipeline::fit(&refs, STREAM_COMPONENTS).unwrap();
    assert!(f.lips.cumulative_explained_variance() >= 0.99);
    assert!(f.hand.cumulative_explained_variance() >= 0.99);
}

#[test]
fn coordinates_stay_in_the_image() {
    let a = alphabet(AlphabetVersion::V1);
    let spec = SyntheticSpec {
        n_sentences: 60,
        ..SyntheticSpec::default()
    };
    for u in generate_synthetic(&spec, &a).unwrap() {
        for f in &u.frames {
            assert!(f.lips.iter().chain(&f.hand).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn repeats_share_references_but_not_frames() {
    let a = alphabet(AlphabetVersion::V2);
    let spec = SyntheticSpec {
        n_sentences: 12,
        repeats: 3,
        ..SyntheticSpec::default()
    };
    let utts = generate_synthetic(&spec, &a).unwrap();
    assert_eq!(utts.len(), 36);
    for group in utts.chunks(3) {
        for u in &group[1..] {
            assert_eq!(u.text, group[0].text);
            assert_eq!(u.phonemes, group[0].phonemes);
            assert_eq!(u.words, group[0].words);
            assert_ne!(u.frames, group[0].frames);
        }
    }
    let texts: std::collections::BTreeSet<_> = utts.iter().map(|u| &u.text).collect();
    assert_eq!(texts.len(), 12);
}

#[test]
fn corpus_round_trips_through_disk() {
    let a = alphabet(AlphabetVersion::V1);
    let spec = SyntheticSpec {
        n_sentences: 5,
        ..SyntheticSpec::default()
    };
    let utts = generate_synthetic(&spec, &a).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&path, &a, &utts).unwrap();
    assert_eq!(load_corpus(&path, &a).unwrap(), utts);
    assert!(load_corpus(&path, &alphabet(AlphabetVersion::V2)).is_err());
}

#[test]
fn pseudo_lexicon_covers_every_word() {
    let a = alphabet(AlphabetVersion::V1);
    let utts = generate_synthetic(&SyntheticSpec { n_sentences: 20, ..SyntheticSpec::default() }, &a).unwrap();
    let lex = pseudo_lexicon(&utts, &a).unwrap();
    for u in &utts {
        let mut pron = Vec::new();
        for w in &u.words {
            let (_, p) = lex.iter().find(|(name, _)| name == w).expect("word in lexicon");
            pron.extend_from_slice(p);
        }
        assert_eq!(pron, u.phonemes);
    }
}
