use cuedspeech::ctc::{brute_force_likelihood, check_feasible, collapse, ctc_loss, greedy_decode, min_frames};
use cuedspeech::evaluation::{accuracy, align, kfold_split, wilson_interval};
use cuedspeech::features::fit_pca;
use cuedspeech::network::Posteriorgram;
use ndarray::Array2;
use proptest::prelude::*;

fn logits(max_t: usize, max_k: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_t, 1..=max_k).prop_flat_map(|(t, k)| {
        prop::collection::vec(-4.0f64..4.0, t * (k + 1))
            .prop_map(move |v| Array2::from_shape_vec((t, k + 1), v).unwrap())
    })
}

/// Logits plus a label sequence over the same K.
fn instance() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    logits(6, 4).prop_flat_map(|l| {
        let k = l.ncols() - 1;
        (Just(l), prop::collection::vec(0..k, 0..=4))
    })
}

fn seq(max_len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..3, 0..=max_len)
}

proptest! {
    #[test]
    fn ctc_matches_path_enumeration((l, labels) in instance()) {
        let post = Posteriorgram::from_logits(l.view());
        prop_assume!(!labels.is_empty() && check_feasible(post.frames(), &labels).is_ok());
        let r = ctc_loss(&post, &labels).unwrap();
        let brute = brute_force_likelihood(&post, &labels).unwrap();
        prop_assert!(((-r.loss).exp() - brute).abs() <= 1e-10 * brute.max(1e-300).max(1.0));
        prop_assert!(r.loss >= 0.0);
        for row in r.grad_wrt_logits.rows() {
            prop_assert!(row.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_sequences_are_rejected((l, labels) in instance()) {
        let post = Posteriorgram::from_logits(l.view());
        prop_assume!(!labels.is_empty() && min_frames(&labels) > post.frames());
        prop_assert!(ctc_loss(&post, &labels).is_err());
    }

    #[test]
    fn posteriorgram_rows_are_distributions(l in logits(8, 6)) {
        let post = Posteriorgram::from_logits(l.view());
        for row in post.probs().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn greedy_is_collapsed_argmax(l in logits(12, 5)) {
        let post = Posteriorgram::from_logits(l.view());
        let out = greedy_decode(&post);
        prop_assert_eq!(&out, &collapse(&post.argmax_path(), post.blank()));
        prop_assert!(out.iter().all(|&s| s < post.blank()));
    }

    #[test]
    fn align_counts_are_consistent(r in seq(7), h in seq(7)) {
        let s = align(&r, &h);
        prop_assert_eq!(s.n_ref, r.len());
        prop_assert_eq!(s.hits() + s.substitutions + s.insertions, h.len());
        // Levenshtein distance is symmetric even though the split into D and I flips.
        let t = align(&h, &r);
        prop_assert_eq!(s.errors(), t.errors());
        prop_assert!(s.errors() <= r.len().max(h.len()));
        prop_assert_eq!(align(&r, &r).errors(), 0);
    }

    #[test]
    fn accuracy_is_at_most_one(r in seq(7), h in seq(7)) {
        prop_assume!(!r.is_empty());
        let a = accuracy(&align(&r, &h)).unwrap();
        prop_assert!(a <= 1.0);
        prop_assert_eq!(a == 1.0, r == h);
    }

    #[test]
    fn wilson_brackets_the_estimate(p in 0.0f64..=1.0, n in 1usize..2000) {
        let (lo, hi) = wilson_interval(p, n, 1.96).unwrap();
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn kfold_partitions_the_corpus(n in 2usize..300, k in 2usize..12, shuffled: bool, seed: u64) {
        prop_assume!(k <= n);
        let plan = kfold_split(n, k, shuffled, seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in 0..k {
            let test = plan.test_indices(f);
            let train = plan.train_indices(f);
            prop_assert_eq!(test.len() + train.len(), n);
            for &i in &test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        if !shuffled {
            // Ordered folds are contiguous blocks in corpus order.
            prop_assert!(plan.assignments.windows(2).all(|w| w[0] <= w[1]));
        }
        prop_assert_eq!(kfold_split(n, k, shuffled, seed).unwrap(), plan);
    }

    #[test]
    fn pca_components_are_orthonormal(
        rows in 6usize..30,
        data in prop::collection::vec(-1.0f64..1.0, 30 * 5),
        c in 1usize..=5,
    ) {
        let x = Array2::from_shape_vec((rows, 5), data[..rows * 5].to_vec()).unwrap();
        let m = fit_pca(x.view(), c).unwrap();
        let w = m.components_matrix();
        let g = w.dot(&w.t());
        for i in 0..c {
            for j in 0..c {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[[i, j]] - want).abs() < 1e-9);
            }
        }
        let r = &m.explained_variance_ratio;
        prop_assert!(r.windows(2).all(|p| p[0] + 1e-12 >= p[1]));
        prop_assert!(r.iter().sum::<f64>() <= 1.0 + 1e-8);
    }
}
