//! Multistream Bi-GRU phoneme recognizers.
//!
//! Three ways of combining the streams are supported:
//!
//! * [`Architecture::EarlyFusion`]: lips, hand and fingertip features are
//!   concatenated frame by frame and fed to a single Bi-GRU.
//! * [`Architecture::TwoStream`]: one Bi-GRU per stream for lips and hand, their
//!   outputs concatenated into a second (fusion) Bi-GRU.
//! * [`Architecture::ThreeStream`]: as above with a third stream for the
//!   fingertip track.
//!
//! A linear layer and a softmax map the last Bi-GRU output to phoneme
//! posteriors (blank last).

mod checkpoint;
pub mod gradcheck;
mod gru;
mod posteriorgram;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gru::{BiGru, BiGruTrace, GruDirection};
pub use posteriorgram::Posteriorgram;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{StreamSet, FINGERTIP_DIM, STREAM_COMPONENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    EarlyFusion,
    TwoStream,
    ThreeStream,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::EarlyFusion => "early-fusion",
            Architecture::TwoStream => "two-stream",
            Architecture::ThreeStream => "three-stream",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early-fusion" => Ok(Architecture::EarlyFusion),
            "two-stream" => Ok(Architecture::TwoStream),
            "three-stream" => Ok(Architecture::ThreeStream),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Which part of a [`StreamSet`] a stream-level Bi-GRU reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamInput {
    Lips,
    Hand,
    Fingertip,
    /// Lips, hand and fingertip concatenated (early fusion).
    Concatenated,
}

impl StreamInput {
    fn name(self) -> &'static str {
        match self {
            StreamInput::Lips => "lips",
            StreamInput::Hand => "hand",
            StreamInput::Fingertip => "fingertip",
            StreamInput::Concatenated => "early",
        }
    }
}

/// Layer sizes. Hidden sizes count units per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Phoneme classes, excluding the blank.
    pub n_phonemes: usize,
    pub early_hidden: usize,
    pub stream_hidden: usize,
    pub fusion_hidden: usize,
    pub lips_dim: usize,
    pub hand_dim: usize,
    pub fingertip_dim: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, n_phonemes: usize) -> Self {
        ModelConfig {
            architecture,
            n_phonemes,
            early_hidden: 128,
            stream_hidden: 128,
            fusion_hidden: 256,
            lips_dim: STREAM_COMPONENTS,
            hand_dim: STREAM_COMPONENTS,
            fingertip_dim: FINGERTIP_DIM,
        }
    }

    /// Same hidden size everywhere; handy for small test models.
    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.early_hidden = hidden;
        self.stream_hidden = hidden;
        self.fusion_hidden = hidden;
        self
    }

    pub fn n_classes(&self) -> usize {
        self.n_phonemes + 1
    }

    fn streams(&self) -> Vec<(StreamInput, usize, usize)> {
        match self.architecture {
            Architecture::EarlyFusion => vec![(
                StreamInput::Concatenated,
                self.lips_dim + self.hand_dim + self.fingertip_dim,
                self.early_hidden,
            )],
            Architecture::TwoStream => vec![
                (StreamInput::Lips, self.lips_dim, self.stream_hidden),
                (StreamInput::Hand, self.hand_dim, self.stream_hidden),
            ],
            Architecture::ThreeStream => vec![
                (StreamInput::Lips, self.lips_dim, self.stream_hidden),
                (StreamInput::Hand, self.hand_dim, self.stream_hidden),
                (StreamInput::Fingertip, self.fingertip_dim, self.stream_hidden),
            ],
        }
    }

    fn has_fusion(&self) -> bool {
        self.architecture != Architecture::EarlyFusion
    }

    fn final_dim(&self) -> usize {
        match self.architecture {
            Architecture::EarlyFusion => 2 * self.early_hidden,
            _ => 2 * self.fusion_hidden,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_phonemes < 1 {
            return Err(Error::invalid("alphabet must have at least one phoneme"));
        }
        if [self.early_hidden, self.stream_hidden, self.fusion_hidden]
            .contains(&0)
        {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamLayer {
    pub input: StreamInput,
    pub layer: BiGru,
}

/// All trainable tensors of a recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stream_layers: Vec<StreamLayer>,
    pub fusion_layer: Option<BiGru>,
    /// (K+1) × final Bi-GRU output width.
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

/// Initializes a model with the default layer sizes.
pub fn init_params(architecture: Architecture, alphabet_size: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(ModelConfig::new(architecture, alphabet_size), seed)
}

impl ModelParams {
    /// Uniform weights in ±sqrt(1/H) of each layer, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |i, h| BiGru::random(i, h, &mut rng), Some(seed)))
    }

    /// A model whose every parameter is zero (also the gradient accumulator).
    pub fn zeros(config: ModelConfig) -> Self {
        Self::build(config, BiGru::zeros, None)
    }

    fn build(config: ModelConfig, mut make: impl FnMut(usize, usize) -> BiGru, seed: Option<u64>) -> Self {
        let stream_layers: Vec<StreamLayer> = config
            .streams()
            .into_iter()
            .map(|(input, dim, hidden)| StreamLayer {
                input,
                layer: make(dim, hidden),
            })
            .collect();
        let fusion_layer = config.has_fusion().then(|| {
            let width = stream_layers.iter().map(|l| l.layer.output_dim()).sum();
            make(width, config.fusion_hidden)
        });
        let out_dim = config.final_dim();
        let mut output_weights = Array2::zeros((config.n_classes(), out_dim));
        if let Some(seed) = seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
            let a = (2.0 / out_dim as f64).sqrt();
            output_weights.mapv_inplace(|_| rng.random_range(-a..=a));
        }
        ModelParams {
            config,
            stream_layers,
            fusion_layer,
            output_weights,
            output_bias: Array1::zeros(config.n_classes()),
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes()
    }

    /// Every parameter tensor, named, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn push<'a>(prefix: &str, l: &'a BiGru, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
            for (dir, d) in [("fwd", &l.forward), ("bwd", &l.backward)] {
                out.push((format!("{prefix}.{dir}.w"), d.w.shape().to_vec(), d.w.as_slice().expect("standard layout")));
                out.push((format!("{prefix}.{dir}.u"), d.u.shape().to_vec(), d.u.as_slice().expect("standard layout")));
                out.push((format!("{prefix}.{dir}.b"), d.b.shape().to_vec(), d.b.as_slice().expect("standard layout")));
            }
        }
        let mut out = Vec::new();
        for sl in &self.stream_layers {
            push(sl.input.name(), &sl.layer, &mut out);
        }
        if let Some(f) = &self.fusion_layer {
            push("fusion", f, &mut out);
        }
        out.push((
            "output.w".to_string(),
            self.output_weights.shape().to_vec(),
            self.output_weights.as_slice().expect("standard layout"),
        ));
        out.push((
            "output.b".to_string(),
            self.output_bias.shape().to_vec(),
            self.output_bias.as_slice().expect("standard layout"),
        ));
        out
    }

    /// Mutable views of every tensor, in the order of [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let layers = self
            .stream_layers
            .iter_mut()
            .map(|sl| &mut sl.layer)
            .chain(self.fusion_layer.as_mut());
        for l in layers {
            for d in [&mut l.forward, &mut l.backward] {
                out.push(d.w.as_slice_mut().expect("standard layout"));
                out.push(d.u.as_slice_mut().expect("standard layout"));
                out.push(d.b.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.output_weights.as_slice_mut().expect("standard layout"));
        out.push(self.output_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.named_tensors().into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum()
    }

    fn check_streams(&self, streams: &StreamSet) -> Result<()> {
        if streams.frames() == 0 {
            return Err(Error::EmptyUtterance);
        }
        let c = &self.config;
        for (m, want, ctx) in [
            (&streams.lips, c.lips_dim, "lips stream"),
            (&streams.hand, c.hand_dim, "hand stream"),
            (&streams.fingertip, c.fingertip_dim, "fingertip stream"),
        ] {
            if m.ncols() != want {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: want,
                    actual: m.ncols(),
                });
            }
        }
        Ok(())
    }

    /// Posteriors plus the activations needed by [`backward`](Self::backward).
    pub fn forward(&self, streams: &StreamSet) -> Result<(Posteriorgram, ForwardTrace)> {
        self.forward_impl(streams, None)
    }

    /// Forward pass with inverted dropout at `rate` on the inputs of the fusion
    /// and output layers.
    pub fn forward_with_dropout<R: Rng>(
        &self,
        streams: &StreamSet,
        rate: f64,
        rng: &mut R,
    ) -> Result<(Posteriorgram, ForwardTrace)> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        if rate == 0.0 {
            return self.forward_impl(streams, None);
        }
        self.forward_impl(streams, Some((rate, rng as &mut dyn rand::RngCore)))
    }

    fn forward_impl(
        &self,
        streams: &StreamSet,
        mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<(Posteriorgram, ForwardTrace)> {
        self.check_streams(streams)?;
        let mut stream_traces = Vec::with_capacity(self.stream_layers.len());
        for sl in &self.stream_layers {
            let x = match sl.input {
                StreamInput::Lips => streams.lips.clone(),
                StreamInput::Hand => streams.hand.clone(),
                StreamInput::Fingertip => streams.fingertip.clone(),
                StreamInput::Concatenated => concatenate(
                    Axis(1),
                    &[streams.lips.view(), streams.hand.view(), streams.fingertip.view()],
                )
                .expect("equal frame counts"),
            };
            stream_traces.push(sl.layer.forward(x));
        }

        let mut mask = |m: &mut Array2<f64>| -> Option<Array2<f64>> {
            let (rate, rng) = dropout.as_mut()?;
            let keep = 1.0 / (1.0 - *rate);
            let mk = m.mapv(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep });
            *m *= &mk;
            Some(mk)
        };

        let (fusion_trace, fusion_mask) = match &self.fusion_layer {
            Some(fusion) => {
                let views: Vec<ArrayView2<'_, f64>> =
                    stream_traces.iter().map(|t| t.output().view()).collect();
                let mut joined = concatenate(Axis(1), &views).expect("equal frame counts");
                let mk = mask(&mut joined);
                (Some(fusion.forward(joined)), mk)
            }
            None => (None, None),
        };
        let mut last = match &fusion_trace {
            Some(t) => t.output().clone(),
            None => stream_traces[0].output().clone(),
        };
        let output_mask = mask(&mut last);
        let mut logits = last.dot(&self.output_weights.t());
        logits += &self.output_bias;
        let post = Posteriorgram::from_logits(logits.view());
        Ok((
            post,
            ForwardTrace {
                stream_traces,
                fusion_trace,
                fusion_mask,
                output_input: last,
                output_mask,
            },
        ))
    }

    /// Exact gradients of a scalar loss given its gradient w.r.t. the logits.
    pub fn backward(&self, trace: &ForwardTrace, grad_wrt_logits: ArrayView2<'_, f64>) -> Result<ModelParams> {
        let mut grad = ModelParams::zeros(self.config);
        self.backward_into(trace, grad_wrt_logits, &mut grad)?;
        Ok(grad)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grad`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        grad_wrt_logits: ArrayView2<'_, f64>,
        grad: &mut ModelParams,
    ) -> Result<()> {
        let t_len = trace.output_input.nrows();
        if grad_wrt_logits.dim() != (t_len, self.n_classes()) {
            return Err(Error::DimensionMismatch {
                context: "logit gradient",
                expected: t_len * self.n_classes(),
                actual: grad_wrt_logits.len(),
            });
        }
        if grad.config != self.config {
            return Err(Error::invalid("gradient accumulator has a different configuration"));
        }
        grad.output_weights += &grad_wrt_logits.t().dot(&trace.output_input);
        grad.output_bias += &grad_wrt_logits.sum_axis(Axis(0));
        let mut d_last = grad_wrt_logits.dot(&self.output_weights);
        if let Some(mk) = &trace.output_mask {
            d_last *= mk;
        }

        let d_streams = match (&self.fusion_layer, &trace.fusion_trace) {
            (Some(fusion), Some(ft)) => {
                let g = grad.fusion_layer.as_mut().expect("same configuration");
                let mut d_joined = fusion
                    .backward(ft, d_last.view(), g, true)
                    .expect("dx requested");
                if let Some(mk) = &trace.fusion_mask {
                    d_joined *= mk;
                }
                let mut parts = Vec::with_capacity(self.stream_layers.len());
                let mut at = 0;
                for sl in &self.stream_layers {
                    let w = sl.layer.output_dim();
                    parts.push(d_joined.slice(s![.., at..at + w]).to_owned());
                    at += w;
                }
                parts
            }
            _ => vec![d_last],
        };
        for ((sl, tr), (d, g)) in self
            .stream_layers
            .iter()
            .zip(&trace.stream_traces)
            .zip(d_streams.iter().zip(grad.stream_layers.iter_mut()))
        {
            sl.layer.backward(tr, d.view(), &mut g.layer, false);
        }
        Ok(())
    }
}

/// Activations retained by [`ModelParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stream_traces: Vec<BiGruTrace>,
    fusion_trace: Option<BiGruTrace>,
    fusion_mask: Option<Array2<f64>>,
    output_input: Array2<f64>,
    output_mask: Option<Array2<f64>>,
}

impl ForwardTrace {
    pub fn stream_traces(&self) -> &[BiGruTrace] {
        &self.stream_traces
    }

    pub fn fusion_trace(&self) -> Option<&BiGruTrace> {
        self.fusion_trace.as_ref()
    }
}
