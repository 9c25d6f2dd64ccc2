//! Pair loss, anchor decoding/encoding, target assignment and the detection loss.

mod anchors;
mod loss;

pub use anchors::{
    assign_targets, cell_of, decode_anchor, encode_anchor, AnchorOffsets, AnchorPrior, Assigned,
    BBox, RawPrediction, TargetAssignment,
};
pub use loss::{
    conf_loss, loc_loss, raw_predictions, total_detection_loss, ConfTarget, DetectionLoss,
    LossWeights,
};

use crate::error::{Error, Result};

/// Clamp applied to every probability fed to a logarithm.
pub const LOG_EPS: f64 = 1e-7;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Binary cross entropy of a single probability against a target in `[0, 1]`,
/// with its derivative with respect to `p` (zero where the clamp is active).
pub fn bce(p: f64, target: f64) -> (f64, f64) {
    let pc = clamp_prob(p);
    let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    let grad = if p > LOG_EPS && p < 1.0 - LOG_EPS {
        -(target / pc) + (1.0 - target) / (1.0 - pc)
    } else {
        0.0
    };
    (loss, grad)
}

/// Mean binary cross entropy over a batch of match probabilities, and its
/// gradient with respect to each probability.
pub fn bce_pair_loss(p: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.is_empty() {
        return Err(Error::Input("pair loss needs at least one prediction".into()));
    }
    if p.len() != y.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            p.len(),
            y.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("pair label {bad} is not 0 or 1")));
    }
    let n = p.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let (l, g) = bce(pi, yi);
        total += l;
        grad.push(g / n);
    }
    Ok((total / n, grad))
}
