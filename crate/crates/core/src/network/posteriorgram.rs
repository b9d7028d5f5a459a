use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = -745.0;

/// Per-frame class distribution, T × (K+1) with the blank in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    probs: Array2<f64>,
    log_probs: Array2<f64>,
}

impl Posteriorgram {
    /// Row-wise softmax of `logits`.
    pub fn from_logits(logits: ArrayView2<'_, f64>) -> Self {
        let mut log_probs = logits.to_owned();
        for mut row in log_probs.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let probs = log_probs.mapv(f64::exp);
        Posteriorgram { probs, log_probs }
    }

    /// Wraps explicit probabilities. Rows must sum to 1 within 1e-9.
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() < 2 {
            return Err(Error::invalid("posteriorgram needs at least one phoneme and the blank"));
        }
        for (t, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("frame {t}: probability outside [0, 1]")));
            }
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("frame {t}: probabilities sum to {}", row.sum())));
            }
        }
        let log_probs = probs.mapv(|p| if p > 0.0 { p.ln().max(LOG_FLOOR) } else { LOG_FLOOR });
        Ok(Posteriorgram { probs, log_probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn log_probs(&self) -> &Array2<f64> {
        &self.log_probs
    }

    pub fn frames(&self) -> usize {
        self.probs.nrows()
    }

    /// K + 1.
    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn blank(&self) -> usize {
        self.probs.ncols() - 1
    }

    /// Most probable class per frame; the lowest index wins ties.
    pub fn argmax_path(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}
