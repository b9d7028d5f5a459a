//! Mini-batch CTC training with Adam, plateau halving of the learning rate
//! and early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::{check_feasible, ctc_loss, greedy_decode};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, align, AlignmentStats};
use crate::features::StreamSet;
use crate::network::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Non-improving epochs before the learning rate is halved.
    pub lr_halving_patience: usize,
    /// Non-improving epochs before training stops.
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Smallest validation-loss decrease that counts as an improvement.
    pub min_improvement: f64,
    /// Inverted dropout on the fusion and output inputs; 0 disables it.
    pub dropout: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            initial_lr: 0.001,
            lr_halving_patience: 5,
            stop_patience: 10,
            max_epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            min_improvement: 1e-6,
            dropout: 0.0,
            grad_clip: None,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.lr_halving_patience < 1 || self.stop_patience < 1 {
            return Err(Error::invalid("patience values must be at least 1"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        if self.max_epochs < 1 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::invalid("adam_epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

/// One training or validation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub streams: StreamSet,
    pub labels: Vec<usize>,
}

/// Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, tensor by tensor in a fixed order.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    let g = grads.tensors();
    let shapes_match = params.config == grads.config
        && state.m.len() == g.len()
        && state.v.len() == g.len()
        && state.m.iter().zip(&g).all(|(m, t)| m.len() == t.len())
        && state.v.iter().zip(&g).all(|(v, t)| v.len() == t.len());
    if !shapes_match {
        return Err(Error::invalid("Adam state, gradients and parameters differ in shape"));
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, epsilon } = hyper;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
}

/// Mean CTC loss and summed greedy-decoding alignment over `samples`.
pub fn evaluate(params: &ModelParams, samples: &[Sample]) -> Result<(f64, AlignmentStats)> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to evaluate"));
    }
    let mut loss = 0.0;
    let mut stats = AlignmentStats::default();
    for s in samples {
        let (post, _) = params.forward(&s.streams)?;
        loss += ctc_loss(&post, &s.labels)?.loss;
        stats = stats + align(&s.labels, &greedy_decode(&post));
    }
    Ok((loss / samples.len() as f64, stats))
}

fn preflight(samples: &[Sample], n_phonemes: usize, which: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid(format!("{which} set is empty")));
    }
    for s in samples {
        let fail = |e: Error| Error::invalid(format!("{which} sample {}: {e}", s.id));
        if s.labels.is_empty() {
            return Err(fail(Error::invalid("empty label sequence")));
        }
        if let Some(&bad) = s.labels.iter().find(|&&l| l >= n_phonemes) {
            return Err(fail(Error::invalid(format!("label {bad} outside the alphabet"))));
        }
        check_feasible(s.streams.frames(), &s.labels).map_err(fail)?;
    }
    Ok(())
}

/// Batches for one epoch: seeded shuffle, then length bucketing inside
/// windows of several batches, then a shuffle of the batch order.
fn epoch_batches(samples: &[Sample], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    const WINDOW_BATCHES: usize = 8;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for window in order.chunks_mut(batch * WINDOW_BATCHES) {
        window.sort_by_key(|&i| samples[i].streams.frames());
        batches.extend(window.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn zero(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        t.fill(0.0);
    }
}

/// Trains `model` and returns the parameters with the best validation loss.
/// `on_epoch` sees every log entry with the current parameters, e.g. for
/// checkpointing when `log.improved`.
pub fn train(
    model: ModelParams,
    train_set: &[Sample],
    valid_set: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = model.config.n_phonemes;
    preflight(train_set, k, "training")?;
    preflight(valid_set, k, "validation")?;

    let hyper = AdamHyper {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        epsilon: config.adam_epsilon,
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0d0d_5eed_0000_0001);
    let mut params = model;
    let mut state = AdamState::new(&params);
    let mut grad = ModelParams::zeros(params.config);
    let mut lr = config.initial_lr;
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut streak = 0usize;
    let mut logs = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut train_loss = 0.0;
        for batch in epoch_batches(train_set, config.batch_size, &mut shuffle_rng) {
            zero(&mut grad);
            for &i in &batch {
                let s = &train_set[i];
                let (post, trace) = if config.dropout > 0.0 {
                    params.forward_with_dropout(&s.streams, config.dropout, &mut dropout_rng)?
                } else {
                    params.forward(&s.streams)?
                };
                let ctc = ctc_loss(&post, &s.labels)?;
                train_loss += ctc.loss;
                params.backward_into(&trace, ctc.grad_wrt_logits.view(), &mut grad)?;
            }
            grad.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = config.grad_clip {
                let norm = grad.squared_norm().sqrt();
                if norm > max_norm {
                    grad.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &grad, &mut state, lr, hyper)?;
        }
        train_loss /= train_set.len() as f64;

        let (valid_loss, stats) = evaluate(&params, valid_set)?;
        let improved = best
            .as_ref()
            .is_none_or(|(b, _, _)| valid_loss <= b - config.min_improvement);
        let log = EpochLog {
            epoch,
            train_loss,
            valid_loss,
            valid_accuracy: accuracy(&stats)?,
            lr,
            improved,
        };
        on_epoch(&log, &params)?;
        logs.push(log);
        if improved {
            best = Some((valid_loss, epoch, params.clone()));
            streak = 0;
        } else {
            streak += 1;
            if streak == config.lr_halving_patience {
                lr /= 2.0;
            }
            if streak >= config.stop_patience {
                break;
            }
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, logs })
}
