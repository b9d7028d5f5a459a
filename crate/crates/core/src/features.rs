//! Per-stream PCA and assembly of the network input streams.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::corpus::{Utterance, HAND_POINTS, LIP_POINTS};
use crate::error::{Error, Result};

/// Components kept per landmark stream.
pub const STREAM_COMPONENTS: usize = 20;
pub const FINGERTIP_DIM: usize = 2;
const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub n_components: usize,
    pub mean: Vec<f64>,
    /// `n_components` rows of length `input_dim`, row-major.
    pub components: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Standard deviation of each projected component on the fit data.
    pub scale: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let d = self.input_dim();
        &self.components[k * d..(k + 1) * d]
    }

    pub fn components_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n_components, self.input_dim()), self.components.clone())
            .expect("component buffer matches shape")
    }

    pub fn cumulative_explained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    /// Maps `frames` (T × d) to normalized component scores (T × k).
    pub fn project(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "pca projection",
                expected: self.input_dim(),
                actual: frames.ncols(),
            });
        }
        let mean = Array1::from(self.mean.clone());
        let centered = &frames - &mean;
        let mut scores = centered.dot(&self.components_matrix().t());
        for (mut col, s) in scores.axis_iter_mut(Axis(1)).zip(&self.scale) {
            col /= *s;
        }
        Ok(scores)
    }

    /// Inverse of [`project`](Self::project) up to the discarded components.
    pub fn reconstruct(&self, scores: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if scores.ncols() != self.n_components {
            return Err(Error::DimensionMismatch {
                context: "pca reconstruction",
                expected: self.n_components,
                actual: scores.ncols(),
            });
        }
        let mut unscaled = scores.to_owned();
        for (mut col, s) in unscaled.axis_iter_mut(Axis(1)).zip(&self.scale) {
            col *= *s;
        }
        let mean = Array1::from(self.mean.clone());
        Ok(unscaled.dot(&self.components_matrix()) + &mean)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: PcaModel = crate::util::read_json(path.as_ref())?;
        let d = model.input_dim();
        let k = model.n_components;
        if model.components.len() != k * d
            || model.scale.len() != k
            || model.explained_variance_ratio.len() != k
        {
            return Err(Error::invalid(format!(
                "{}: inconsistent PCA model dimensions",
                path.as_ref().display()
            )));
        }
        Ok(model)
    }
}

/// Fits PCA on the rows of `data` (n × d) by eigen-decomposing the sample
/// covariance.
pub fn fit_pca(data: ArrayView2<'_, f64>, n_components: usize) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    if n_components < 1 || n_components > n.min(d) {
        return Err(Error::invalid(format!(
            "n_components must be in 1..={}, got {n_components}",
            n.min(d)
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let cov = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(n_components * d);
    let mut ratio = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        // sign convention: largest-magnitude entry is non-negative
        let pivot = v
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, x) } else { best })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend_from_slice(&v);
        let lambda = eig.eigenvalues[idx].max(0.0);
        ratio.push(if total > 0.0 { lambda / total } else { 0.0 });
    }

    let comp = Array2::from_shape_vec((n_components, d), components.clone()).expect("shape");
    let scores = centered.dot(&comp.t());
    let scale = scores
        .axis_iter(Axis(1))
        .map(|col| {
            let var = col.iter().map(|x| x * x).sum::<f64>() / (n as f64 - 1.0);
            var.sqrt().max(SCALE_FLOOR)
        })
        .collect();

    Ok(PcaModel {
        n_components,
        mean: mean.to_vec(),
        components,
        explained_variance_ratio: ratio,
        scale,
    })
}

/// Train-set statistics used to z-score the fingertip stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingertipNorm {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl FingertipNorm {
    pub fn fit<'a>(utterances: impl IntoIterator<Item = &'a Utterance>) -> Result<Self> {
        let points: Vec<[f64; 2]> = utterances
            .into_iter()
            .flat_map(|u| u.frames.iter().map(|f| f.fingertip))
            .collect();
        let n = points.len();
        if n < 2 {
            return Err(Error::invalid("fingertip statistics need at least 2 frames"));
        }
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for k in 0..2 {
            let m0 = points.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            // second pass removes the rounding of the naive mean
            let m = m0 + points.iter().map(|p| p[k] - m0).sum::<f64>() / n as f64;
            let var = points.iter().map(|p| (p[k] - m) * (p[k] - m)).sum::<f64>() / (n as f64 - 1.0);
            mean[k] = m;
            std[k] = var.sqrt().max(SCALE_FLOOR);
        }
        Ok(FingertipNorm { mean, std })
    }
}

/// The three network input streams of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSet {
    pub lips: Array2<f64>,
    pub hand: Array2<f64>,
    pub fingertip: Array2<f64>,
}

impl StreamSet {
    pub fn new(lips: Array2<f64>, hand: Array2<f64>, fingertip: Array2<f64>) -> Result<Self> {
        let t = lips.nrows();
        for (m, _name) in [(&hand, "hand"), (&fingertip, "fingertip")] {
            if m.nrows() != t {
                return Err(Error::DimensionMismatch {
                    context: "stream frame count",
                    expected: t,
                    actual: m.nrows(),
                });
            }
        }
        if [&lips, &hand, &fingertip]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("non-finite stream value"));
        }
        Ok(StreamSet {
            lips,
            hand,
            fingertip,
        })
    }

    pub fn frames(&self) -> usize {
        self.lips.nrows()
    }

    /// Copy with the time axis reversed.
    pub fn reversed(&self) -> StreamSet {
        let rev = |m: &Array2<f64>| m.slice(ndarray::s![..;-1, ..]).to_owned();
        StreamSet {
            lips: rev(&self.lips),
            hand: rev(&self.hand),
            fingertip: rev(&self.fingertip),
        }
    }
}

/// Frozen feature extraction: both PCA models and the fingertip statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub lips: PcaModel,
    pub hand: PcaModel,
    pub fingertip: FingertipNorm,
}

impl FeaturePipeline {
    /// Fits the lip and hand PCA models and fingertip statistics on `train`.
    pub fn fit(train: &[&Utterance], n_components: usize) -> Result<Self> {
        let lips = stack_frames(train, |f| &f.lips, 2 * LIP_POINTS)?;
        let hand = stack_frames(train, |f| &f.hand, 2 * HAND_POINTS)?;
        Ok(FeaturePipeline {
            lips: fit_pca(lips.view(), n_components)?,
            hand: fit_pca(hand.view(), n_components)?,
            fingertip: FingertipNorm::fit(train.iter().copied())?,
        })
    }

    pub fn streams(&self, utterance: &Utterance) -> Result<StreamSet> {
        build_streams(utterance, &self.lips, &self.hand, &self.fingertip)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::util::write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        crate::util::read_json(path.as_ref())
    }
}

fn stack_frames(
    utterances: &[&Utterance],
    field: impl Fn(&crate::corpus::CuedFrame) -> &Vec<f64>,
    dim: usize,
) -> Result<Array2<f64>> {
    let rows: usize = utterances.iter().map(|u| u.frames.len()).sum();
    let mut data = Vec::with_capacity(rows * dim);
    for u in utterances {
        for f in &u.frames {
            let v = field(f);
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "landmark vector",
                    expected: dim,
                    actual: v.len(),
                });
            }
            data.extend_from_slice(v);
        }
    }
    Ok(Array2::from_shape_vec((rows, dim), data).expect("row-major stack"))
}

/// Projects an utterance onto the lip and hand PCA spaces and z-scores its
/// fingertip track.
pub fn build_streams(
    utterance: &Utterance,
    lips_pca: &PcaModel,
    hand_pca: &PcaModel,
    fingertip_norm: &FingertipNorm,
) -> Result<StreamSet> {
    if utterance.frames.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let refs = [utterance];
    let lips = stack_frames(&refs, |f| &f.lips, lips_pca.input_dim())?;
    let hand = stack_frames(&refs, |f| &f.hand, hand_pca.input_dim())?;
    let t = utterance.frames.len();
    let fingertip = Array2::from_shape_fn((t, FINGERTIP_DIM), |(i, k)| {
        (utterance.frames[i].fingertip[k] - fingertip_norm.mean[k]) / fingertip_norm.std[k]
    });
    StreamSet::new(lips_pca.project(lips.view())?, hand_pca.project(hand.view())?, fingertip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CuedFrame;
    use ndarray::array;

    #[test]
    fn diagonal_line_has_one_component() {
        let data = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let m = fit_pca(data.view(), 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.component(0)[0].abs() - h).abs() < 1e-12);
        assert!((m.component(0)[1].abs() - h).abs() < 1e-12);
        assert!((m.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.mean, vec![2.0, 2.0]);
    }

    #[test]
    fn mean_matches_column_means() {
        let data = array![[-1.0, 5.0, 0.3], [1.0, 7.0, 0.1], [0.0, 9.0, 0.8], [0.0, 3.0, 0.2]];
        let m = fit_pca(data.view(), 2).unwrap();
        assert_eq!(m.mean[0], 0.0);
        assert!((m.mean[1] - 6.0).abs() < 1e-15);
        assert!((m.mean[2] - 0.35).abs() < 1e-15);
    }

    fn scattered(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| {
            let x = (i * 7 + j * 13) as f64;
            (x * 0.37).sin() * (j + 1) as f64 + (x * 0.11).cos()
        })
    }

    #[test]
    fn full_basis_explains_everything() {
        let data = scattered(30, 5);
        let m = fit_pca(data.view(), 5).unwrap();
        assert!((m.cumulative_explained_variance() - 1.0).abs() < 1e-8);
        for w in m.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn components_orthonormal_and_sign_fixed() {
        let data = scattered(40, 6);
        let m = fit_pca(data.view(), 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = m.component(a).iter().zip(m.component(b)).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
            let row = m.component(a);
            let pivot = row.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(pivot >= 0.0);
        }
    }

    #[test]
    fn projection_of_mean_is_zero_and_scores_unit_std() {
        let data = scattered(50, 4);
        let m = fit_pca(data.view(), 3).unwrap();
        let mean = Array2::from_shape_vec((1, 4), m.mean.clone()).unwrap();
        let z = m.project(mean.view()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let scores = m.project(data.view()).unwrap();
        for col in scores.axis_iter(Axis(1)) {
            let mu = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 49.0;
            assert!((var.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rank_one_data_has_empty_tail_components() {
        let base = array![0.3, -0.2, 0.5];
        let dir = array![1.0, 2.0, -2.0] / 3.0;
        let data = Array2::from_shape_fn((10, 3), |(i, j)| base[j] + (i as f64 - 4.5) * dir[j]);
        let m = fit_pca(data.view(), 3).unwrap();
        let raw = (&data - &Array1::from(m.mean.clone())).dot(&m.components_matrix().t());
        for v in raw.column(1).iter().chain(raw.column(2).iter()) {
            assert!(v.abs() < 1e-8);
        }
    }

    #[test]
    fn out_of_range_components_rejected() {
        let data = scattered(5, 3);
        assert!(fit_pca(data.view(), 0).is_err());
        assert!(fit_pca(data.view(), 4).is_err());
        assert!(fit_pca(data.slice(ndarray::s![..1, ..]), 1).is_err());
    }

    #[test]
    fn constant_data_gets_floored_scale() {
        let data = Array2::from_elem((6, 3), 0.25);
        let m = fit_pca(data.view(), 2).unwrap();
        assert!(m.scale.iter().all(|s| *s == SCALE_FLOOR));
        let z = m.project(data.view()).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn projection_dimension_checked() {
        let m = fit_pca(scattered(10, 3).view(), 2).unwrap();
        assert!(m.project(scattered(4, 2).view()).is_err());
    }

    fn utterance(t: usize) -> Utterance {
        Utterance {
            id: "u".into(),
            text: String::new(),
            words: vec![],
            phonemes: vec![],
            frames: (0..t)
                .map(|i| CuedFrame {
                    frame_index: i,
                    lips: (0..84).map(|j| ((i * 3 + j) as f64 * 0.21).sin()).collect(),
                    hand: (0..42).map(|j| ((i * 5 + j) as f64 * 0.17).cos()).collect(),
                    fingertip: [0.4, 0.6],
                })
                .collect(),
        }
    }

    #[test]
    fn stream_shapes_and_centered_fingertip() {
        let train = utterance(60);
        let pipeline = FeaturePipeline::fit(&[&train], STREAM_COMPONENTS).unwrap();
        let s = pipeline.streams(&utterance(10)).unwrap();
        assert_eq!(s.lips.dim(), (10, 20));
        assert_eq!(s.hand.dim(), (10, 20));
        assert_eq!(s.fingertip.dim(), (10, 2));
        assert!(s.fingertip.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_utterance_rejected() {
        let train = utterance(60);
        let pipeline = FeaturePipeline::fit(&[&train], 5).unwrap();
        let err = pipeline.streams(&utterance(0)).unwrap_err();
        assert_eq!(err.to_string(), "empty utterance");
    }
}
