use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box given by its top-left corner and size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Rect {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: usize,
    pub class: String,
    pub rect: Rect,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: usize,
    pub rect: Rect,
}

/// Greedy non-maximum suppression. Records are visited by descending
/// confidence (stable on ties) and kept when their IoU with every kept
/// record is at most `iou_threshold`.
pub fn nms(records: &[DetectionRecord], iou_threshold: f64) -> Vec<DetectionRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].confidence.total_cmp(&records[a].confidence));
    let mut kept: Vec<DetectionRecord> = Vec::new();
    for i in order {
        let r = &records[i];
        if kept.iter().all(|k| iou(&k.rect, &r.rect) <= iou_threshold) {
            kept.push(r.clone());
        }
    }
    kept
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the monotonically interpolated precision-recall curve.
    #[default]
    AllPoints,
    /// Mean interpolated precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class: String,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub n_gt: usize,
    pub curve: Vec<PrPoint>,
}

/// Pascal-VOC style average precision for one class.
///
/// Detections are matched in descending confidence to the still-unmatched
/// ground truth of the same image with the highest IoU at or above
/// `iou_threshold`; unmatched detections are false positives.
pub fn average_precision(
    class: &str,
    records: &[DetectionRecord],
    gts: &[GroundTruth],
    iou_threshold: f64,
    method: ApMethod,
) -> ApResult {
    let mut by_image: HashMap<usize, Vec<(Rect, bool)>> = HashMap::new();
    for g in gts {
        by_image.entry(g.image_id).or_default().push((g.rect, false));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].confidence.total_cmp(&records[a].confidence));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(records.len());
    for i in order {
        let r = &records[i];
        let best = by_image.get_mut(&r.image_id).and_then(|cands| {
            cands
                .iter_mut()
                .filter(|(_, used)| !used)
                .map(|c| (iou(&c.0, &r.rect), c))
                .filter(|(o, _)| *o >= iou_threshold)
                .fold(None::<(f64, &mut (Rect, bool))>, |acc, (o, c)| match acc {
                    Some((bo, _)) if bo >= o => acc,
                    _ => Some((o, c)),
                })
        });
        match best {
            Some((_, c)) => {
                c.1 = true;
                tp += 1;
            }
            None => fp += 1,
        }
        if !gts.is_empty() {
            curve.push(PrPoint {
                recall: tp as f64 / gts.len() as f64,
                precision: tp as f64 / (tp + fp) as f64,
                confidence: r.confidence,
            });
        }
    }

    let ap = if gts.is_empty() {
        None
    } else {
        Some(match method {
            ApMethod::AllPoints => all_points_ap(&curve),
            ApMethod::ElevenPoint => eleven_point_ap(&curve),
        })
    };
    ApResult {
        class: class.to_string(),
        ap,
        tp,
        fp,
        n_gt: gts.len(),
        curve,
    }
}

fn all_points_ap(curve: &[PrPoint]) -> f64 {
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    for p in curve {
        recall.push(p.recall);
        precision.push(p.precision);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

fn eleven_point_ap(curve: &[PrPoint]) -> f64 {
    (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            curve
                .iter()
                .filter(|p| p.recall >= r)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Unweighted mean AP over classes that have ground truth.
pub fn mean_ap(results: &[ApResult]) -> Result<f64> {
    let aps: Vec<f64> = results.iter().filter_map(|r| r.ap).collect();
    if aps.is_empty() {
        return Err(Error::Metric("no class with ground truth to average".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
