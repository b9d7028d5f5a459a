//! Pronunciation lexicon, prefix tree and lexicon-constrained Token Passing
//! over CTC posteriorgrams.
//!
//! Each tree node `n` (other than the root) stands for the phoneme on the arc
//! entering it and carries two CTC states: "emitting that phoneme" and "blank
//! after it". The root only has a blank state, used before the first word.
//! Scores are Viterbi (max over alignments) log-probabilities plus a
//! word-insertion penalty per emitted word.
//!
//! Moving to a phoneme equal to the previous one (inside a word or across a
//! word boundary) is only allowed from a blank state, exactly as the CTC
//! collapse rule demands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::PhonemeAlphabet;
use crate::ctc::{best_path_log_prob, min_frames};
use crate::error::{Error, Result};
use crate::network::Posteriorgram;

/// Word → pronunciations. Words are kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Vec<usize>>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut lex = Lexicon::new();
        for (w, p) in entries {
            lex.insert(w, p)?;
        }
        Ok(lex)
    }

    /// Adds a pronunciation; duplicates are ignored.
    pub fn insert(&mut self, word: impl Into<String>, pronunciation: Vec<usize>) -> Result<()> {
        let word = word.into();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!("invalid word {word:?}")));
        }
        if pronunciation.is_empty() {
            return Err(Error::invalid(format!("word {word:?} has an empty pronunciation")));
        }
        let prons = self.entries.entry(word).or_default();
        if !prons.contains(&pronunciation) {
            prons.push(pronunciation);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<usize>]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    /// (word, pronunciation) pairs in word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries
            .iter()
            .flat_map(|(w, ps)| ps.iter().map(move |p| (w.as_str(), p.as_slice())))
    }

    fn check_alphabet(&self, n_phonemes: usize) -> Result<()> {
        for (w, p) in self.iter() {
            if let Some(&bad) = p.iter().find(|&&x| x >= n_phonemes) {
                return Err(Error::invalid(format!(
                    "word {w:?}: phoneme index {bad} outside the {n_phonemes}-symbol alphabet"
                )));
            }
        }
        Ok(())
    }

    /// Writes the tab-separated text format read by [`load_lexicon`].
    pub fn save(&self, path: impl AsRef<Path>, alphabet: &PhonemeAlphabet) -> Result<()> {
        let path = path.as_ref();
        self.check_alphabet(alphabet.len())?;
        let mut text = String::new();
        for (w, p) in self.iter() {
            text.push_str(w);
            text.push('\t');
            text.push_str(&alphabet.labels(p).join(" "));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads `word<TAB>label label ...` lines; `#` starts a comment line.
pub fn load_lexicon(path: impl AsRef<Path>, alphabet: &PhonemeAlphabet) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lex = Lexicon::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, pron) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(i + 1, "expected word<TAB>phonemes".into()))?;
        let labels: Vec<&str> = pron.split_whitespace().collect();
        let pron = alphabet
            .parse_labels(&labels)
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        lex.insert(word.trim(), pron).map_err(|e| parse_err(i + 1, e.to_string()))?;
    }
    if lex.is_empty() {
        return Err(parse_err(0, "lexicon has no entries".into()));
    }
    Ok(lex)
}

#[derive(Debug, Clone)]
struct Node {
    symbol: Option<usize>,
    parent: Option<usize>,
    children: Vec<(usize, usize)>,
    /// Words completed here, as indices into `PrefixTree::words`.
    words: Vec<usize>,
}

/// Deterministic trie over pronunciations.
#[derive(Debug, Clone)]
pub struct PrefixTree {
    nodes: Vec<Node>,
    words: Vec<String>,
    n_phonemes: usize,
}

impl PrefixTree {
    pub const ROOT: usize = 0;

    /// Builds the tree for a lexicon over an alphabet of `n_phonemes` symbols.
    pub fn new(lexicon: &Lexicon, n_phonemes: usize) -> Result<Self> {
        if lexicon.is_empty() {
            return Err(Error::invalid("empty lexicon"));
        }
        lexicon.check_alphabet(n_phonemes)?;
        let mut tree = PrefixTree {
            nodes: vec![Node {
                symbol: None,
                parent: None,
                children: Vec::new(),
                words: Vec::new(),
            }],
            words: lexicon.words().map(str::to_string).collect(),
            n_phonemes,
        };
        for (wi, word) in lexicon.words().enumerate() {
            for pron in lexicon.pronunciations(word).expect("listed word") {
                let mut node = Self::ROOT;
                for &ph in pron {
                    node = match tree.child(node, ph) {
                        Some(c) => c,
                        None => {
                            let id = tree.nodes.len();
                            tree.nodes.push(Node {
                                symbol: Some(ph),
                                parent: Some(node),
                                children: Vec::new(),
                                words: Vec::new(),
                            });
                            tree.nodes[node].children.push((ph, id));
                            id
                        }
                    };
                }
                tree.nodes[node].words.push(wi);
            }
        }
        for n in &mut tree.nodes {
            n.children.sort_unstable();
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_phonemes(&self) -> usize {
        self.n_phonemes
    }

    pub fn child(&self, node: usize, phoneme: usize) -> Option<usize> {
        self.nodes[node]
            .children
            .iter()
            .find(|(p, _)| *p == phoneme)
            .map(|&(_, c)| c)
    }

    /// Words completed at `node`.
    pub fn words_at(&self, node: usize) -> impl Iterator<Item = &str> {
        self.nodes[node].words.iter().map(|&w| self.words[w].as_str())
    }

    /// Phonemes on the path from the root to `node`.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut n = node;
        while let (Some(sym), Some(parent)) = (self.nodes[n].symbol, self.nodes[n].parent) {
            out.push(sym);
            n = parent;
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenPassingConfig {
    /// Tokens kept per frame; `usize::MAX` disables pruning.
    pub beam_width: usize,
    /// Added to the log-score for every emitted word.
    pub word_insertion_penalty: f64,
}

impl Default for TokenPassingConfig {
    fn default() -> Self {
        TokenPassingConfig {
            beam_width: 64,
            word_insertion_penalty: 0.0,
        }
    }
}

impl TokenPassingConfig {
    pub fn exact(word_insertion_penalty: f64) -> Self {
        TokenPassingConfig {
            beam_width: usize::MAX,
            word_insertion_penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub words: Vec<String>,
    /// Concatenated pronunciations of `words`.
    pub phonemes: Vec<usize>,
    pub log_score: f64,
}

/// A surviving hypothesis: CTC state plus the words completed so far.
#[derive(Debug, Clone, Copy)]
struct Token {
    log_score: f64,
    /// Index into the history arena; `None` before the first word.
    history: Option<usize>,
}

/// Completed word: terminal node, word index, previous entry.
#[derive(Debug, Clone, Copy)]
struct HistoryEntry {
    node: usize,
    word: usize,
    prev: Option<usize>,
}

#[inline]
fn state(node: usize, blank: bool) -> usize {
    2 * node + blank as usize
}

fn better(cand: f64, cur: &Option<Token>) -> bool {
    cur.is_none_or(|t| cand > t.log_score)
}

fn relax(tokens: &mut [Option<Token>], active: &mut Vec<usize>, s: usize, log_score: f64, history: Option<usize>) {
    if better(log_score, &tokens[s]) {
        if tokens[s].is_none() {
            active.push(s);
        }
        tokens[s] = Some(Token { log_score, history });
    }
}

/// Best word sequence for `posteriors` under the lexicon encoded by `tree`.
pub fn token_passing_decode(
    posteriors: &Posteriorgram,
    tree: &PrefixTree,
    config: &TokenPassingConfig,
) -> Result<Decoded> {
    if tree.is_empty() {
        return Err(Error::invalid("empty prefix tree"));
    }
    if config.beam_width < 1 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    if posteriors.frames() == 0 {
        return Err(Error::EmptyUtterance);
    }
    if posteriors.classes() != tree.n_phonemes + 1 {
        return Err(Error::DimensionMismatch {
            context: "posteriorgram classes",
            expected: tree.n_phonemes + 1,
            actual: posteriors.classes(),
        });
    }
    let lp = posteriors.log_probs();
    let blank = posteriors.blank();
    let penalty = config.word_insertion_penalty;
    let n_states = 2 * tree.len();
    let root_children = &tree.nodes[PrefixTree::ROOT].children;

    let mut arena: Vec<HistoryEntry> = Vec::new();
    let mut cur: Vec<Option<Token>> = vec![None; n_states];
    let mut next: Vec<Option<Token>> = vec![None; n_states];
    let mut active: Vec<usize> = Vec::new();
    let mut next_active: Vec<usize> = Vec::new();

    // first frame: leading blank at the root or the first phoneme of a word
    relax(&mut cur, &mut active, state(PrefixTree::ROOT, true), lp[[0, blank]], None);
    for &(ph, c) in root_children {
        relax(&mut cur, &mut active, state(c, false), lp[[0, ph]], None);
    }
    prune(&mut cur, &mut active, config.beam_width);

    for t in 1..posteriors.frames() {
        let row = lp.row(t);
        for &s in &active {
            let tok = cur[s].expect("active state");
            let node = s / 2;
            let is_blank = s % 2 == 1;
            let last = tree.nodes[node].symbol;
            // stay
            if is_blank {
                relax(&mut next, &mut next_active, s, tok.log_score + row[blank], tok.history);
            } else {
                let sym = last.expect("non-root emitting state");
                relax(&mut next, &mut next_active, s, tok.log_score + row[sym], tok.history);
                relax(&mut next, &mut next_active, state(node, true), tok.log_score + row[blank], tok.history);
            }
            // advance inside the word
            for &(ph, c) in &tree.nodes[node].children {
                if is_blank || Some(ph) != last {
                    relax(&mut next, &mut next_active, state(c, false), tok.log_score + row[ph], tok.history);
                }
            }
            // finish a word and start the next one
            if let Some(&word) = tree.nodes[node].words.first() {
                let mut entry = None;
                for &(ph, c) in root_children {
                    if is_blank || Some(ph) != last {
                        let score = tok.log_score + penalty + row[ph];
                        if better(score, &next[state(c, false)]) {
                            let h = *entry.get_or_insert_with(|| {
                                arena.push(HistoryEntry {
                                    node,
                                    word,
                                    prev: tok.history,
                                });
                                arena.len() - 1
                            });
                            relax(&mut next, &mut next_active, state(c, false), score, Some(h));
                        }
                    }
                }
            }
        }
        for &s in &active {
            cur[s] = None;
        }
        active.clear();
        std::mem::swap(&mut cur, &mut next);
        std::mem::swap(&mut active, &mut next_active);
        prune(&mut cur, &mut active, config.beam_width);
    }

    // the final token must sit at the end of a word
    let mut best: Option<(f64, usize)> = None;
    for &s in &active {
        let node = s / 2;
        if tree.nodes[node].words.is_empty() {
            continue;
        }
        let score = cur[s].expect("active state").log_score + penalty;
        if best.is_none_or(|(b, bs)| score > b || (score == b && s < bs)) {
            best = Some((score, s));
        }
    }
    let (log_score, s) = best.ok_or(Error::NoFeasibleSequence)?;
    let node = s / 2;
    let mut chain = vec![(node, tree.nodes[node].words[0])];
    let mut h = cur[s].expect("active state").history;
    while let Some(i) = h {
        chain.push((arena[i].node, arena[i].word));
        h = arena[i].prev;
    }
    chain.reverse();
    Ok(Decoded {
        words: chain.iter().map(|&(_, w)| tree.words[w].clone()).collect(),
        phonemes: chain.iter().flat_map(|&(n, _)| tree.path(n)).collect(),
        log_score,
    })
}

/// Keeps the `beam` best active states (ties resolved by state index).
fn prune(tokens: &mut [Option<Token>], active: &mut Vec<usize>, beam: usize) {
    if active.len() <= beam {
        return;
    }
    active.sort_unstable_by(|&a, &b| {
        let (sa, sb) = (tokens[a].expect("active").log_score, tokens[b].expect("active").log_score);
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    for &s in &active[beam..] {
        tokens[s] = None;
    }
    active.truncate(beam);
}

/// Largest instance accepted by [`exhaustive_decode`].
pub const EXHAUSTIVE_MAX_WORDS: usize = 6;
pub const EXHAUSTIVE_MAX_FRAMES: usize = 10;
pub const EXHAUSTIVE_MAX_SEQUENCE: usize = 4;

/// Brute-force reference decoder: scores every sequence of 1..=`max_words`
/// lexicon words by the best CTC path of its pronunciation plus the insertion
/// penalty. Ties go to the lexicographically smallest word sequence.
pub fn exhaustive_decode(
    posteriors: &Posteriorgram,
    lexicon: &Lexicon,
    max_words: usize,
    word_insertion_penalty: f64,
) -> Result<Decoded> {
    if lexicon.is_empty() || lexicon.len() > EXHAUSTIVE_MAX_WORDS {
        return Err(Error::invalid(format!(
            "exhaustive decoding needs 1..={EXHAUSTIVE_MAX_WORDS} words"
        )));
    }
    if posteriors.frames() > EXHAUSTIVE_MAX_FRAMES {
        return Err(Error::invalid(format!(
            "exhaustive decoding needs at most {EXHAUSTIVE_MAX_FRAMES} frames"
        )));
    }
    if !(1..=EXHAUSTIVE_MAX_SEQUENCE).contains(&max_words) {
        return Err(Error::invalid(format!(
            "max_words must be in 1..={EXHAUSTIVE_MAX_SEQUENCE}"
        )));
    }
    lexicon.check_alphabet(posteriors.classes() - 1)?;
    let items: Vec<(&str, &[usize])> = lexicon.iter().collect();
    let t_len = posteriors.frames();
    let mut best: Option<Decoded> = None;
    let mut stack: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new())];
    while let Some((seq, phones)) = stack.pop() {
        if !seq.is_empty() {
            if let Some(lp) = best_path_log_prob(posteriors, &phones) {
                let score = lp + word_insertion_penalty * seq.len() as f64;
                let words: Vec<String> = seq.iter().map(|&i| items[i].0.to_string()).collect();
                let take = match &best {
                    None => true,
                    Some(b) => score > b.log_score || (score == b.log_score && words < b.words),
                };
                if take {
                    best = Some(Decoded {
                        words,
                        phonemes: phones.clone(),
                        log_score: score,
                    });
                }
            }
        }
        if seq.len() == max_words {
            continue;
        }
        for (i, (_, pron)) in items.iter().enumerate() {
            let mut p = phones.clone();
            p.extend_from_slice(pron);
            if min_frames(&p) <= t_len {
                let mut s = seq.clone();
                s.push(i);
                stack.push((s, p));
            }
        }
    }
    best.ok_or(Error::NoFeasibleSequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{alphabet, AlphabetVersion};
    use ndarray::Array2;

    // classes: a=0, b=1, blank=2
    fn post(rows: &[[f64; 3]]) -> Posteriorgram {
        let m = Array2::from_shape_fn((rows.len(), 3), |(t, k)| rows[t][k]);
        Posteriorgram::from_probs(m).unwrap()
    }

    fn tree(entries: &[(&str, &[usize])]) -> (Lexicon, PrefixTree) {
        let lex = Lexicon::from_entries(entries.iter().map(|(w, p)| (*w, p.to_vec()))).unwrap();
        let tree = PrefixTree::new(&lex, 2).unwrap();
        (lex, tree)
    }

    #[test]
    fn single_word_fits_deterministic_posteriors() {
        let (_, t) = tree(&[("ab", &[0, 1])]);
        let p = post(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]);
        let d = token_passing_decode(&p, &t, &TokenPassingConfig::default()).unwrap();
        assert_eq!(d.words, vec!["ab"]);
        assert_eq!(d.phonemes, vec![0, 1]);
        assert_eq!(d.log_score, 0.0);
    }

    #[test]
    fn picks_ab_over_ba_and_matches_exhaustive() {
        let (lex, t) = tree(&[("ab", &[0, 1]), ("ba", &[1, 0])]);
        let p = post(&[[0.9, 0.05, 0.05], [0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.9, 0.05]]);
        let d = token_passing_decode(&p, &t, &TokenPassingConfig::exact(0.0)).unwrap();
        assert_eq!(d.words, vec!["ab"]);
        let e = exhaustive_decode(&p, &lex, 4, 0.0).unwrap();
        assert!((d.log_score - e.log_score).abs() < 1e-12);
    }

    #[test]
    fn large_penalty_prefers_one_long_word() {
        let (lex, t) = tree(&[("a", &[0]), ("aa", &[0, 0])]);
        // a a - a a: the blank forces two "a" emissions
        let (a, bl) = ([0.98, 0.01, 0.01], [0.01, 0.01, 0.98]);
        let p = post(&[a, a, bl, a, a, a]);
        let cfg = TokenPassingConfig::exact(-1e6);
        let d = token_passing_decode(&p, &t, &cfg).unwrap();
        assert_eq!(d.words, vec!["aa"]);
        let e = exhaustive_decode(&p, &lex, 4, -1e6).unwrap();
        assert_eq!(e.words, vec!["aa"]);
        assert!((d.log_score - e.log_score).abs() < 1e-6);
    }

    #[test]
    fn repeated_phoneme_across_words_needs_blank() {
        let (_, t) = tree(&[("a", &[0])]);
        // two frames of pure "a" cannot be "a a": only one word fits
        let p = post(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let d = token_passing_decode(&p, &t, &TokenPassingConfig::exact(0.0)).unwrap();
        assert_eq!(d.words, vec!["a"]);
        // with a blank in between, two words are possible
        let p = post(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        let d = token_passing_decode(&p, &t, &TokenPassingConfig::exact(0.0)).unwrap();
        assert_eq!(d.words, vec!["a", "a"]);
    }

    #[test]
    fn errors() {
        let (lex, t) = tree(&[("ab", &[0, 1])]);
        let p = post(&[[0.5, 0.25, 0.25]]);
        assert!(matches!(
            token_passing_decode(&p, &t, &TokenPassingConfig::default()),
            Err(Error::NoFeasibleSequence)
        ));
        assert!(matches!(exhaustive_decode(&p, &lex, 2, 0.0), Err(Error::NoFeasibleSequence)));
        let cfg = TokenPassingConfig {
            beam_width: 0,
            word_insertion_penalty: 0.0,
        };
        assert!(token_passing_decode(&p, &t, &cfg).is_err());
        assert!(PrefixTree::new(&Lexicon::new(), 2).is_err());
    }

    #[test]
    fn single_word_lexicon_exhaustive() {
        let (lex, _) = tree(&[("b", &[1])]);
        let p = post(&[[0.7, 0.2, 0.1], [0.6, 0.3, 0.1]]);
        let e = exhaustive_decode(&p, &lex, 1, 0.0).unwrap();
        assert_eq!(e.words, vec!["b"]);
    }

    #[test]
    fn tree_is_deterministic_and_annotated() {
        let (_, t) = tree(&[("ab", &[0, 1]), ("a", &[0]), ("abb", &[0, 1, 1])]);
        assert_eq!(t.len(), 4);
        let a = t.child(PrefixTree::ROOT, 0).unwrap();
        assert_eq!(t.words_at(a).collect::<Vec<_>>(), vec!["a"]);
        let ab = t.child(a, 1).unwrap();
        assert_eq!(t.path(ab), vec![0, 1]);
        assert_eq!(t.words_at(t.child(ab, 1).unwrap()).collect::<Vec<_>>(), vec!["abb"]);
    }

    #[test]
    fn load_and_save_round_trip() {
        let alpha = alphabet(AlphabetVersion::V1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        fs::write(&p, "# test\nab\ta b\n\nab\ta b\nab\tb a\nx\tgz\n").unwrap();
        let lex = load_lexicon(&p, &alpha).unwrap();
        assert_eq!(lex.len(), 2);
        let a = alpha.index_of("a").unwrap();
        let b = alpha.index_of("b").unwrap();
        assert_eq!(lex.pronunciations("ab").unwrap(), &[vec![a, b], vec![b, a]]);
        let q = dir.path().join("lex2.txt");
        lex.save(&q, &alpha).unwrap();
        assert_eq!(load_lexicon(&q, &alpha).unwrap(), lex);
    }

    #[test]
    fn load_errors_name_line_and_label() {
        let alpha = alphabet(AlphabetVersion::V1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lex.txt");
        fs::write(&p, "ab\ta b\nbad\ta zz\n").unwrap();
        let msg = load_lexicon(&p, &alpha).unwrap_err().to_string();
        assert!(msg.contains(":2:") && msg.contains("zz"), "{msg}");
        fs::write(&p, "# only a comment\n").unwrap();
        assert!(load_lexicon(&p, &alpha).is_err());
    }

    #[test]
    fn scores_are_log_probabilities() {
        let (_, t) = tree(&[("ab", &[0, 1]), ("b", &[1])]);
        let p = post(&[[0.4, 0.3, 0.3], [0.2, 0.5, 0.3], [0.1, 0.1, 0.8]]);
        let d = token_passing_decode(&p, &t, &TokenPassingConfig::default()).unwrap();
        assert!(d.log_score <= 0.0);
    }
}
