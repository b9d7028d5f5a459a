//! Connectionist temporal classification: loss with exact logit gradients,
//! greedy decoding, best-path scoring and a brute-force likelihood oracle.
//!
//! Labels are interleaved with blanks (`- l1 - l2 - ... - lL -`) and the
//! forward/backward variables are kept in log space.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::Posteriorgram;
use crate::util::log_add;

#[derive(Debug, Clone)]
pub struct CtcResult {
    /// Negative log-likelihood of the label sequence.
    pub loss: f64,
    /// Gradient of `loss` with respect to the pre-softmax logits, T × (K+1).
    pub grad_wrt_logits: Array2<f64>,
}

/// Minimum number of frames able to emit `labels`: one per label plus one
/// blank between each pair of equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_labels(labels: &[usize], blank: usize) -> Result<()> {
    if labels.contains(&blank) {
        return Err(Error::BlankInLabels(blank));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > blank) {
        return Err(Error::invalid(format!(
            "label {bad} outside the {} output classes",
            blank + 1
        )));
    }
    Ok(())
}

/// Errors unless `labels` can be emitted in `frames` frames.
pub fn check_feasible(frames: usize, labels: &[usize]) -> Result<()> {
    if frames < min_frames(labels) {
        return Err(Error::NoValidAlignment {
            frames,
            labels: labels.len(),
        });
    }
    Ok(())
}

fn extended(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Whether state `s` of the extended sequence may be entered from `s - 2`.
#[inline]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// CTC negative log-likelihood of `labels` and its gradient w.r.t. logits.
pub fn ctc_loss(posteriors: &Posteriorgram, labels: &[usize]) -> Result<CtcResult> {
    let blank = posteriors.blank();
    if labels.is_empty() {
        return Err(Error::invalid("CTC labels must be non-empty"));
    }
    check_labels(labels, blank)?;
    let t_len = posteriors.frames();
    check_feasible(t_len, labels)?;

    let lp = posteriors.log_probs();
    let ext = extended(labels, blank);
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((t_len, s_len), neg);
    alpha[[0, 0]] = lp[[0, blank]];
    alpha[[0, 1]] = lp[[0, ext[1]]];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(&ext, s, blank) {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != neg {
                alpha[[t, s]] = acc + lp[[t, ext[s]]];
            }
        }
    }

    let mut beta = Array2::from_elem((t_len, s_len), neg);
    beta[[t_len - 1, s_len - 1]] = lp[[t_len - 1, blank]];
    beta[[t_len - 1, s_len - 2]] = lp[[t_len - 1, ext[s_len - 2]]];
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && can_skip(&ext, s + 2, blank) {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            if acc != neg {
                beta[[t, s]] = acc + lp[[t, ext[s]]];
            }
        }
    }

    let log_likelihood = log_add(
        alpha[[t_len - 1, s_len - 1]],
        alpha[[t_len - 1, s_len - 2]],
    );
    if !log_likelihood.is_finite() {
        return Err(Error::NoValidAlignment {
            frames: t_len,
            labels: labels.len(),
        });
    }

    // d(-ln p)/d logit_k(t) = y_k(t) - (1/p) * sum_{s: ext[s]=k} alpha*beta / y_k(t)
    let mut grad = posteriors.probs().clone();
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[[t, s]] + beta[[t, s]];
            if ab == neg {
                continue;
            }
            let k = ext[s];
            grad[[t, k]] -= (ab - lp[[t, k]] - log_likelihood).exp();
        }
    }

    Ok(CtcResult {
        loss: -log_likelihood,
        grad_wrt_logits: grad,
    })
}

/// Log-probability of the single best frame-level path that collapses to
/// `labels`, or `None` when no path exists.
pub fn best_path_log_prob(posteriors: &Posteriorgram, labels: &[usize]) -> Option<f64> {
    let blank = posteriors.blank();
    if check_labels(labels, blank).is_err() {
        return None;
    }
    let t_len = posteriors.frames();
    if t_len == 0 || t_len < min_frames(labels) {
        return None;
    }
    let lp = posteriors.log_probs();
    let ext = extended(labels, blank);
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;
    let mut prev = vec![neg; s_len];
    prev[0] = lp[[0, blank]];
    if s_len > 1 {
        prev[1] = lp[[0, ext[1]]];
    }
    let mut cur = vec![neg; s_len];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut best = prev[s];
            if s >= 1 {
                best = best.max(prev[s - 1]);
            }
            if can_skip(&ext, s, blank) {
                best = best.max(prev[s - 2]);
            }
            cur[s] = if best == neg { neg } else { best + lp[[t, ext[s]]] };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let end = if s_len > 1 {
        prev[s_len - 1].max(prev[s_len - 2])
    } else {
        prev[0]
    };
    (end > neg).then_some(end)
}

/// Merges adjacent repeats and removes blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = None;
    for &p in path {
        if Some(p) != last && p != blank {
            out.push(p);
        }
        last = Some(p);
    }
    out
}

/// Per-frame argmax (lowest index on ties), then [`collapse`].
pub fn greedy_decode(posteriors: &Posteriorgram) -> Vec<usize> {
    collapse(&posteriors.argmax_path(), posteriors.blank())
}

const BRUTE_FORCE_MAX_FRAMES: usize = 8;
const BRUTE_FORCE_MAX_PHONEMES: usize = 5;

/// Exact label likelihood by enumerating every `(K+1)^T` frame path.
pub fn brute_force_likelihood(posteriors: &Posteriorgram, labels: &[usize]) -> Result<f64> {
    let t_len = posteriors.frames();
    let classes = posteriors.classes();
    if t_len > BRUTE_FORCE_MAX_FRAMES || classes - 1 > BRUTE_FORCE_MAX_PHONEMES {
        return Err(Error::invalid(format!(
            "brute force limited to T <= {BRUTE_FORCE_MAX_FRAMES} and K <= {BRUTE_FORCE_MAX_PHONEMES}"
        )));
    }
    let probs = posteriors.probs();
    let blank = posteriors.blank();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == labels {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs[[t, k]])
                .product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}
