//! Scoring: edit-distance alignment, accuracy, Wilson intervals, k-fold
//! splits and the text-overlap measure behind the split-bias experiment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Reference length and edit counts of one alignment (or a sum of them).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub n_ref: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub insertions: usize,
}

impl AlignmentStats {
    pub fn errors(&self) -> usize {
        self.deletions + self.substitutions + self.insertions
    }

    pub fn hits(&self) -> usize {
        self.n_ref - self.deletions - self.substitutions
    }
}

impl std::ops::Add for AlignmentStats {
    type Output = AlignmentStats;

    fn add(self, o: AlignmentStats) -> AlignmentStats {
        AlignmentStats {
            n_ref: self.n_ref + o.n_ref,
            deletions: self.deletions + o.deletions,
            substitutions: self.substitutions + o.substitutions,
            insertions: self.insertions + o.insertions,
        }
    }
}

impl std::iter::Sum for AlignmentStats {
    fn sum<I: Iterator<Item = AlignmentStats>>(iter: I) -> Self {
        iter.fold(AlignmentStats::default(), |a, b| a + b)
    }
}

/// Minimum unit-cost edit alignment. On equal-cost paths the backtrace prefers
/// a substitution (or match), then an insertion, then a deletion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> AlignmentStats {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        cost[i * w] = i;
    }
    for (j, c) in cost.iter_mut().take(w).enumerate() {
        *c = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = cost[i * w + j - 1] + 1;
            let del = cost[(i - 1) * w + j] + 1;
            cost[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut stats = AlignmentStats {
        n_ref: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if cost[(i - 1) * w + j - 1] + usize::from(mismatch) == here {
                stats.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && cost[i * w + j - 1] + 1 == here {
            stats.insertions += 1;
            j -= 1;
        } else {
            stats.deletions += 1;
            i -= 1;
        }
    }
    stats
}

/// (N − D − S − I) / N; negative when insertions dominate.
pub fn accuracy(stats: &AlignmentStats) -> Result<f64> {
    if stats.n_ref == 0 {
        return Err(Error::EmptyReference);
    }
    let n = stats.n_ref as f64;
    Ok((n - stats.deletions as f64 - stats.substitutions as f64 - stats.insertions as f64) / n)
}

/// (N − D − S) / N: insertions are not penalised.
pub fn correctness(stats: &AlignmentStats) -> Result<f64> {
    if stats.n_ref == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(stats.hits() as f64 / stats.n_ref as f64)
}

/// Word-level correctness of a hypothesis against a non-empty reference.
pub fn word_correctness<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<f64> {
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    correctness(&align(&r, &h))
}

pub const Z_95: f64 = 1.96;

/// Wilson score interval for a proportion `p` observed over `n` trials,
/// clipped to [0, 1].
pub fn wilson_interval(p: f64, n: usize, z: f64) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::invalid("Wilson interval needs n >= 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("proportion {p} outside [0, 1]")));
    }
    let n = n as f64;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Assignment of utterances to k folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_count: usize,
    /// Fold index of each utterance, in corpus order.
    pub assignments: Vec<usize>,
    pub shuffled: bool,
    pub seed: Option<u64>,
}

impl SplitPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.fold_count];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// k folds whose sizes differ by at most one (the first `n % k` folds get the
/// extra item). Ordered mode cuts contiguous blocks of the corpus order;
/// shuffled mode first applies a seeded permutation.
pub fn kfold_split(n_utterances: usize, k: usize, shuffled: bool, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::invalid("k-fold split needs k >= 2"));
    }
    if k > n_utterances {
        return Err(Error::invalid(format!(
            "cannot split {n_utterances} utterances into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_utterances).collect();
    if shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let (base, extra) = (n_utterances / k, n_utterances % k);
    let mut assignments = vec![0; n_utterances];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &u in &order[pos..pos + size] {
            assignments[u] = fold;
        }
        pos += size;
    }
    Ok(SplitPlan {
        fold_count: k,
        assignments,
        shuffled,
        seed: shuffled.then_some(seed),
    })
}

/// Share of the test fold whose exact text also occurs in a training fold.
pub fn overlap_fraction<S: AsRef<str>>(plan: &SplitPlan, texts: &[S], fold: usize) -> Result<f64> {
    if fold >= plan.fold_count {
        return Err(Error::invalid(format!("fold {fold} out of range")));
    }
    if texts.len() != plan.assignments.len() {
        return Err(Error::DimensionMismatch {
            context: "texts per utterance",
            expected: plan.assignments.len(),
            actual: texts.len(),
        });
    }
    let train: HashSet<&str> = plan.train_indices(fold).into_iter().map(|i| texts[i].as_ref()).collect();
    let test = plan.test_indices(fold);
    if test.is_empty() {
        return Ok(0.0);
    }
    let shared = test.iter().filter(|&&i| train.contains(texts[i].as_ref())).count();
    Ok(shared as f64 / test.len() as f64)
}

/// Scores of one test fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub utterances: usize,
    #[serde(flatten)]
    pub stats: AlignmentStats,
    pub accuracy: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub word_correctness: Option<f64>,
}

impl FoldReport {
    /// The Wilson interval uses N reference phonemes as trials and the
    /// accuracy (clipped to [0, 1]) as the observed proportion.
    pub fn new(fold: usize, utterances: usize, stats: AlignmentStats, word_correctness: Option<f64>) -> Result<Self> {
        let acc = accuracy(&stats)?;
        let (wilson_low, wilson_high) = wilson_interval(acc.clamp(0.0, 1.0), stats.n_ref, Z_95)?;
        Ok(FoldReport {
            fold,
            utterances,
            stats,
            accuracy: acc,
            wilson_low,
            wilson_high,
            word_correctness,
        })
    }
}

/// Per-fold reports with min / mean / max accuracy across folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub folds: Vec<FoldReport>,
    pub min_accuracy: f64,
    pub mean_accuracy: f64,
    pub max_accuracy: f64,
}

impl EvaluationReport {
    pub fn new(folds: Vec<FoldReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("no folds to summarise"));
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        Ok(EvaluationReport {
            min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            folds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(n: usize, d: usize, s: usize, i: usize) -> AlignmentStats {
        AlignmentStats {
            n_ref: n,
            deletions: d,
            substitutions: s,
            insertions: i,
        }
    }

    #[test]
    fn align_examples() {
        let r: Vec<u8> = b"abcdefg".to_vec();
        assert_eq!(align(&r, &r), stats(7, 0, 0, 0));
        assert_eq!(align(b"abc", b"ac"), stats(3, 1, 0, 0));
        assert_eq!(align(b"", b"aa"), stats(0, 0, 0, 2));
        assert_eq!(align(b"ab", b""), stats(2, 2, 0, 0));
    }

    #[test]
    fn tie_prefers_substitution_then_insertion() {
        // "ab" vs "ba": cost 2 either as S+S or as I+D; substitutions win
        assert_eq!(align(b"ab", b"ba"), stats(2, 0, 2, 0));
        // "x" vs "yx": one insertion, the x still matches
        assert_eq!(align(b"x", b"yx"), stats(1, 0, 0, 1));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&stats(100, 10, 15, 5)).unwrap(), 0.70);
        assert_eq!(accuracy(&stats(5, 0, 0, 0)).unwrap(), 1.0);
        assert!((accuracy(&stats(10, 0, 0, 12)).unwrap() + 0.2).abs() < 1e-15);
        assert!(matches!(accuracy(&stats(0, 0, 0, 1)), Err(Error::EmptyReference)));
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0.5, 100, Z_95).unwrap();
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4, "{lo} {hi}");
        assert_eq!(wilson_interval(0.0, 10, Z_95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(1.0, 10, Z_95).unwrap().1, 1.0);
        assert!(wilson_interval(0.5, 0, Z_95).is_err());
        let mut last = f64::INFINITY;
        for n in [10, 100, 1000, 10_000, 100_000] {
            let (lo, hi) = wilson_interval(0.3, n, Z_95).unwrap();
            assert!(hi - lo < last);
            last = hi - lo;
        }
    }

    #[test]
    fn kfold_examples() {
        let p = kfold_split(20, 10, false, 0).unwrap();
        assert_eq!(p.test_indices(0), vec![0, 1]);
        let p = kfold_split(476, 10, false, 0).unwrap();
        let sizes = p.fold_sizes();
        assert_eq!(sizes.iter().filter(|&&s| s == 48).count(), 6);
        assert_eq!(sizes.iter().filter(|&&s| s == 47).count(), 4);
        assert_eq!(kfold_split(50, 5, true, 9).unwrap(), kfold_split(50, 5, true, 9).unwrap());
        assert_ne!(kfold_split(50, 5, true, 9).unwrap(), kfold_split(50, 5, true, 10).unwrap());
        assert!(kfold_split(3, 4, false, 0).is_err());
        assert!(kfold_split(3, 1, false, 0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let distinct: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
        for shuffled in [false, true] {
            let p = kfold_split(30, 5, shuffled, 1).unwrap();
            for f in 0..5 {
                assert_eq!(overlap_fraction(&p, &distinct, f).unwrap(), 0.0);
            }
        }
        let dup: Vec<String> = (0..40).map(|i| format!("t{}", i / 2)).collect();
        let p = kfold_split(40, 10, false, 0).unwrap();
        for f in 0..10 {
            assert_eq!(overlap_fraction(&p, &dup, f).unwrap(), 0.0);
        }
        // odd fold size: blocks cut through a pair at most at both ends
        let dup: Vec<String> = (0..30).map(|i| format!("t{}", i / 2)).collect();
        let p = kfold_split(30, 10, false, 0).unwrap();
        for f in 0..10 {
            assert!(overlap_fraction(&p, &dup, f).unwrap() <= 2.0 / 3.0);
        }
    }

    #[test]
    fn word_correctness_examples() {
        let r = ["a", "b", "c", "d"];
        assert_eq!(word_correctness(&r, &r).unwrap(), 1.0);
        assert_eq!(word_correctness(&r, &["a", "x", "d"]).unwrap(), 0.5);
        assert_eq!(word_correctness(&["x"], &["y", "x"]).unwrap(), 1.0);
        assert!(word_correctness::<&str>(&[], &["x"]).is_err());
    }

    #[test]
    fn report_summary() {
        let folds = vec![
            FoldReport::new(0, 3, stats(10, 1, 0, 0), None).unwrap(),
            FoldReport::new(1, 3, stats(10, 0, 0, 0), None).unwrap(),
        ];
        assert_eq!(folds[1].wilson_high, 1.0);
        let r = EvaluationReport::new(folds).unwrap();
        assert_eq!(r.min_accuracy, 0.9);
        assert_eq!(r.max_accuracy, 1.0);
        assert!((r.mean_accuracy - 0.95).abs() < 1e-15);
    }
}
