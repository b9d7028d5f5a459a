//! Finite-difference checks of the analytic CTC and network gradients.

use ndarray::{Array2, ArrayView2};

use super::{ModelParams, Posteriorgram};
use crate::ctc::ctc_loss;
use crate::error::Result;
use crate::features::StreamSet;

/// Denominator floor for relative errors, so that parameters with a true
/// gradient of (numerically) zero are judged on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Largest relative error between the CTC logit gradient and central
/// differences of step `eps` over every logit.
pub fn ctc_gradient_error(logits: ArrayView2<'_, f64>, labels: &[usize], eps: f64) -> Result<f64> {
    let loss_at = |l: &Array2<f64>| -> Result<f64> {
        Ok(ctc_loss(&Posteriorgram::from_logits(l.view()), labels)?.loss)
    };
    let analytic = ctc_loss(&Posteriorgram::from_logits(logits), labels)?.grad_wrt_logits;
    let mut work = logits.to_owned();
    let mut worst = 0.0f64;
    for idx in 0..work.len() {
        let (t, k) = (idx / work.ncols(), idx % work.ncols());
        let orig = work[[t, k]];
        work[[t, k]] = orig + eps;
        let up = loss_at(&work)?;
        work[[t, k]] = orig - eps;
        let down = loss_at(&work)?;
        work[[t, k]] = orig;
        worst = worst.max(relative_error(analytic[[t, k]], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Largest relative error between backpropagated gradients of the CTC loss
/// and central differences of step `eps`, over every model parameter.
pub fn network_gradient_error(params: &ModelParams, streams: &StreamSet, labels: &[usize], eps: f64) -> Result<f64> {
    let (post, trace) = params.forward(streams)?;
    let ctc = ctc_loss(&post, labels)?;
    let grad = params.backward(&trace, ctc.grad_wrt_logits.view())?;
    let analytic: Vec<f64> = grad.tensors().into_iter().flatten().copied().collect();

    let loss_at = |p: &ModelParams| -> Result<f64> { Ok(ctc_loss(&p.forward(streams)?.0, labels)?.loss) };
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let mut flat = 0;
    let n_tensors = work.tensors().len();
    for ti in 0..n_tensors {
        let len = work.tensors()[ti].len();
        for j in 0..len {
            let orig = work.tensors()[ti][j];
            work.tensors_mut()[ti][j] = orig + eps;
            let up = loss_at(&work)?;
            work.tensors_mut()[ti][j] = orig - eps;
            let down = loss_at(&work)?;
            work.tensors_mut()[ti][j] = orig;
            worst = worst.max(relative_error(analytic[flat], (up - down) / (2.0 * eps)));
            flat += 1;
        }
    }
    Ok(worst)
}
