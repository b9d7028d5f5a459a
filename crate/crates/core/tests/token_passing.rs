use cuedspeech::lexicon::{exhaustive_decode, token_passing_decode, Lexicon, PrefixTree, TokenPassingConfig};
use cuedspeech::network::Posteriorgram;
use cuedspeech::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random lexicon of up to 6 words and a posteriorgram short enough that no
/// feasible sequence has more than 4 words.
fn instance(rng: &mut ChaCha8Rng) -> (Lexicon, Posteriorgram, f64) {
    let k = rng.random_range(2..=4);
    let n_words = rng.random_range(1..=6);
    let mut lex = Lexicon::new();
    let mut min_len = usize::MAX;
    for w in 0..n_words {
        let len = rng.random_range(1..=3);
        let pron: Vec<usize> = (0..len).map(|_| rng.random_range(0..k)).collect();
        min_len = min_len.min(len);
        lex.insert(format!("w{w}"), pron).unwrap();
    }
    let t_max = (5 * min_len - 1).min(10);
    let t = rng.random_range(1..=t_max);
    let logits = Array2::from_shape_fn((t, k + 1), |_| rng.random_range(-3.0..3.0));
    let penalty = if rng.random_bool(0.5) { 0.0 } else { -rng.random_range(0.0..2.0) };
    (lex, Posteriorgram::from_logits(logits.view()), penalty)
}

#[test]
fn exact_token_passing_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0;
    for _ in 0..100 {
        let (lex, post, penalty) = instance(&mut rng);
        let tree = PrefixTree::new(&lex, post.classes() - 1).unwrap();
        let tp = token_passing_decode(&post, &tree, &TokenPassingConfig::exact(penalty));
        let ex = exhaustive_decode(&post, &lex, 4, penalty);
        match (tp, ex) {
            (Ok(a), Ok(b)) => {
                assert!((a.log_score - b.log_score).abs() < 1e-9, "{} vs {}", a.log_score, b.log_score);
                compared += 1;
            }
            (Err(Error::NoFeasibleSequence), Err(Error::NoFeasibleSequence)) => {}
            (a, b) => panic!("decoders disagree: {a:?} vs {b:?}"),
        }
    }
    assert!(compared >= 80, "only {compared} feasible instances");
}

#[test]
fn phonemes_are_concatenated_pronunciations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (lex, post, penalty) = instance(&mut rng);
        let tree = PrefixTree::new(&lex, post.classes() - 1).unwrap();
        let Ok(d) = token_passing_decode(&post, &tree, &TokenPassingConfig::exact(penalty)) else {
            continue;
        };
        // some choice of pronunciations must reproduce the phoneme string
        let mut reachable = vec![vec![]];
        for w in &d.words {
            reachable = reachable
                .into_iter()
                .flat_map(|pre: Vec<usize>| {
                    lex.pronunciations(w).unwrap().iter().map(move |p| [pre.clone(), p.clone()].concat())
                })
                .collect();
        }
        assert!(reachable.contains(&d.phonemes));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Top-k pruning is not monotone in k (a wider beam can admit a token
    // that later crowds out the eventual winner), so the assertable form is
    // that no pruned search beats the exact one.
    #[test]
    fn pruned_beams_never_beat_exact_search(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lex, post, penalty) = instance(&mut rng);
        let tree = PrefixTree::new(&lex, post.classes() - 1).unwrap();
        let exact = token_passing_decode(&post, &tree, &TokenPassingConfig::exact(penalty));
        for beam in [1usize, 2, 3, 4, 8, 16] {
            let cfg = TokenPassingConfig { beam_width: beam, word_insertion_penalty: penalty };
            if let Ok(d) = token_passing_decode(&post, &tree, &cfg) {
                let best = exact.as_ref().expect("exact search finds whatever a beam finds");
                prop_assert!(d.log_score <= best.log_score + 1e-12);
            }
        }
    }

    #[test]
    fn beam_covering_all_states_is_exact(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lex, post, penalty) = instance(&mut rng);
        let tree = PrefixTree::new(&lex, post.classes() - 1).unwrap();
        let exact = token_passing_decode(&post, &tree, &TokenPassingConfig::exact(penalty));
        let cfg = TokenPassingConfig { beam_width: 2 * tree.len(), word_insertion_penalty: penalty };
        let wide = token_passing_decode(&post, &tree, &cfg);
        prop_assert_eq!(exact.ok().map(|d| d.log_score), wide.ok().map(|d| d.log_score));
    }
}
