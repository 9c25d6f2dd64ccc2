use serde::{Deserialize, Serialize};

use super::anchors::{decode_anchor, AnchorPrior, RawPrediction, TargetAssignment};
use super::bce;
use crate::error::{Error, Result};
use crate::numerics::ops::sigmoid_scalar;
use crate::numerics::Tensor;

/// What a positive anchor's confidence is trained towards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfTarget {
    /// 1 for positives.
    #[default]
    Binary,
    /// IoU between the decoded prediction and its ground truth (no gradient
    /// flows through the target).
    Iou,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_coord: f64,
    pub lambda_obj: f64,
    pub lambda_noobj: f64,
    #[serde(default)]
    pub conf_target: ConfTarget,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_coord: 5.0,
            lambda_obj: 1.0,
            lambda_noobj: 0.5,
            conf_target: ConfTarget::Binary,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_coord, self.lambda_obj, self.lambda_noobj];
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || l.iter().all(|&v| v == 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative and not all zero, got {l:?}"
            )));
        }
        Ok(())
    }
}

/// Unpacks sample `n` of a `[N, B*5, S, S]` head into `(cell, anchor)` order.
pub fn raw_predictions(head: &Tensor, n: usize, anchors: usize) -> Result<Vec<RawPrediction>> {
    let (batch, c, s, s2) = head.dims4()?;
    if c != anchors * 5 || s != s2 || n >= batch {
        return Err(Error::Dimension(format!(
            "head {:?} is not [N>{n}, {}, S, S]",
            head.shape(),
            anchors * 5
        )));
    }
    let plane = s * s;
    let item = &head.data()[n * c * plane..(n + 1) * c * plane];
    let mut out = Vec::with_capacity(plane * anchors);
    for cell in 0..plane {
        for j in 0..anchors {
            let at = |k: usize| item[(j * 5 + k) * plane + cell];
            out.push(RawPrediction {
                tx: at(0),
                ty: at(1),
                tw: at(2),
                th: at(3),
                to: at(4),
            });
        }
    }
    Ok(out)
}

fn check_len(len: usize, a: &TargetAssignment) -> Result<()> {
    if len != a.entries.len() {
        return Err(Error::Dimension(format!(
            "{len} predictions for an assignment over {} anchors",
            a.entries.len()
        )));
    }
    Ok(())
}

/// Squared t-space error over positive anchors, scaled by `lambda_coord`.
/// Returns the loss and its gradient for each prediction (`to` untouched).
pub fn loc_loss(
    pred: &[RawPrediction],
    assignment: &TargetAssignment,
    lambda_coord: f64,
) -> Result<(f64, Vec<RawPrediction>)> {
    check_len(pred.len(), assignment)?;
    let mut loss = 0.0;
    let mut grad = vec![RawPrediction::default(); pred.len()];
    for ((p, e), g) in pred.iter().zip(&assignment.entries).zip(&mut grad) {
        let Some(e) = e else { continue };
        let t = e.offsets;
        let d = [p.tx - t.tx, p.ty - t.ty, p.tw - t.tw, p.th - t.th];
        loss += d.iter().map(|v| v * v).sum::<f64>();
        g.tx = 2.0 * lambda_coord * d[0];
        g.ty = 2.0 * lambda_coord * d[1];
        g.tw = 2.0 * lambda_coord * d[2];
        g.th = 2.0 * lambda_coord * d[3];
    }
    Ok((lambda_coord * loss, grad))
}

/// Confidence loss with target 1 on positives and 0 elsewhere. Returns the
/// loss and its gradient with respect to each confidence.
pub fn conf_loss(
    conf: &[f64],
    assignment: &TargetAssignment,
    lambda_obj: f64,
    lambda_noobj: f64,
) -> Result<(f64, Vec<f64>)> {
    let targets: Vec<f64> = assignment
        .entries
        .iter()
        .map(|e| if e.is_some() { 1.0 } else { 0.0 })
        .collect();
    conf_loss_with_targets(conf, assignment, &targets, lambda_obj, lambda_noobj)
}

fn conf_loss_with_targets(
    conf: &[f64],
    assignment: &TargetAssignment,
    targets: &[f64],
    lambda_obj: f64,
    lambda_noobj: f64,
) -> Result<(f64, Vec<f64>)> {
    check_len(conf.len(), assignment)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(conf.len());
    for (i, (&c, &target)) in conf.iter().zip(targets).enumerate() {
        let lambda = if assignment.is_positive(i) {
            lambda_obj
        } else {
            lambda_noobj
        };
        let (l, g) = bce(c, target);
        loss += lambda * l;
        grad.push(lambda * g);
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct DetectionLoss {
    /// `loc + conf`, averaged over the batch.
    pub total: f64,
    pub loc: f64,
    pub conf: f64,
    /// Gradient of `total` with respect to the raw head.
    pub grad: Tensor,
}

/// Localization plus confidence loss for a batch of raw heads, one
/// assignment per batch item, averaged over the batch.
pub fn total_detection_loss(
    head: &Tensor,
    assignments: &[TargetAssignment],
    priors: &[AnchorPrior],
    weights: &LossWeights,
) -> Result<DetectionLoss> {
    let (n, c, s, _) = head.dims4()?;
    if assignments.len() != n {
        return Err(Error::Input(format!(
            "{} assignments for a batch of {n}",
            assignments.len()
        )));
    }
    let anchors = priors.len();
    let plane = s * s;
    let mut grad = Tensor::zeros(head.shape());
    let (mut loc_total, mut conf_total) = (0.0, 0.0);
    let scale = 1.0 / n as f64;
    for (b, a) in assignments.iter().enumerate() {
        if a.grid != s || a.anchors != anchors {
            return Err(Error::Dimension(format!(
                "assignment for {}x{} grid with {} anchors, head is {s}x{s} with {anchors}",
                a.grid, a.grid, a.anchors
            )));
        }
        let pred = raw_predictions(head, b, anchors)?;
        let (loc, gloc) = loc_loss(&pred, a, weights.lambda_coord)?;
        let conf: Vec<f64> = pred.iter().map(|p| sigmoid_scalar(p.to)).collect();
        let targets: Vec<f64> = pred
            .iter()
            .enumerate()
            .map(|(i, p)| match (&a.entries[i], weights.conf_target) {
                (None, _) => 0.0,
                (Some(_), ConfTarget::Binary) => 1.0,
                (Some(e), ConfTarget::Iou) => {
                    let cell = i / anchors;
                    let decoded = decode_anchor(p, (cell % s, cell / s), &priors[i % anchors]);
                    decoded.iou(&e.gt)
                }
            })
            .collect();
        let (cl, gconf) =
            conf_loss_with_targets(&conf, a, &targets, weights.lambda_obj, weights.lambda_noobj)?;
        loc_total += loc;
        conf_total += cl;

        let item = &mut grad.data_mut()[b * c * plane..(b + 1) * c * plane];
        for (i, (gl, gc)) in gloc.iter().zip(&gconf).enumerate() {
            let cell = i / anchors;
            let j = i % anchors;
            let p = conf[i];
            let vals = [gl.tx, gl.ty, gl.tw, gl.th, gc * p * (1.0 - p)];
            for (k, v) in vals.into_iter().enumerate() {
                item[(j * 5 + k) * plane + cell] = v * scale;
            }
        }
    }
    let total = (loc_total + conf_total) * scale;
    if !total.is_finite() {
        return Err(Error::Training(format!("detection loss is {total}")));
    }
    Ok(DetectionLoss {
        total,
        loc: loc_total * scale,
        conf: conf_total * scale,
        grad,
    })
}
