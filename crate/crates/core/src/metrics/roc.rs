use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub accuracy: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    /// One point per threshold, ascending threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Highest-accuracy point; the lowest threshold wins ties.
    pub best: RocPoint,
}

/// Operating point when everything scoring at least `threshold` is called a match.
pub(crate) fn point_at(scores: &[f64], labels: &[bool], threshold: f64) -> RocPoint {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    RocPoint {
        threshold,
        tpr: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
        accuracy: ratio(tp + tn, scores.len()),
        precision: if tp + fp == 0 { 1.0 } else { ratio(tp, tp + fp) },
    }
}

/// Thresholds the scores at `n_thresholds` evenly spaced values spanning
/// their observed range.
///
/// AUC integrates the (FPR, TPR) curve with the trapezoid rule, anchored at
/// (0, 0) and (1, 1).
pub fn roc_sweep(scores: &[f64], labels: &[bool], n_thresholds: usize) -> Result<RocReport> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.iter().any(|&y| y) || labels.iter().all(|&y| y) {
        return Err(Error::Metric(
            "ROC sweep needs at least one positive and one negative label".into(),
        ));
    }
    if n_thresholds == 0 || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("ROC sweep needs finite scores and thresholds".into()));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let points: Vec<RocPoint> = (0..n_thresholds)
        .map(|i| {
            // the top threshold must be exactly the highest score
            let t = if i == 0 {
                lo
            } else if i == n_thresholds - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n_thresholds - 1) as f64
            };
            point_at(scores, labels, t)
        })
        .collect();

    let mut curve: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    curve.push((0.0, 0.0));
    curve.push((1.0, 1.0));
    curve.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let auc = curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();

    let best = points
        .iter()
        .copied()
        .fold(None::<RocPoint>, |acc, p| match acc {
            Some(b) if b.accuracy >= p.accuracy => Some(b),
            _ => Some(p),
        })
        .expect("at least one threshold");
    Ok(RocReport { points, auc, best })
}
