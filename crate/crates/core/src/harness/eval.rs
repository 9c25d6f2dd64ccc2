use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::model::Model;
use super::train::{stream_rng, STREAM_EVAL, STREAM_LOCALIZE};
use super::Dataset;
use crate::arch::Detector;
use crate::data::{grid_to_pixel, ImageCache, PairSampler, Side};
use crate::detmath::{decode_anchor, raw_predictions, AnchorPrior};
use crate::error::{Error, Result};
use crate::metrics::{
    average_precision, iou, mean_ap, nms, roc_sweep, ApResult, DetectionRecord, GroundTruth,
    RocReport,
};
use crate::numerics::Tensor;

/// Pairs per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionEval {
    pub pairs: usize,
    pub roc: RocReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub pairs: usize,
    /// One entry per class of the evaluated side, in split order.
    pub classes: Vec<ApResult>,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalReport {
    Recognition(RecognitionEval),
    Detection(DetectionEval),
}

impl EvalReport {
    /// `name value` lines.
    pub fn metrics_text(&self) -> String {
        let mut s = String::new();
        match self {
            EvalReport::Recognition(r) => {
                let b = &r.roc.best;
                writeln!(s, "pairs {}", r.pairs).unwrap();
                writeln!(s, "auc {:.6}", r.roc.auc).unwrap();
                writeln!(s, "best_threshold {:.6}", b.threshold).unwrap();
                writeln!(s, "best_accuracy {:.6}", b.accuracy).unwrap();
                writeln!(s, "best_tpr {:.6}", b.tpr).unwrap();
                writeln!(s, "best_fpr {:.6}", b.fpr).unwrap();
            }
            EvalReport::Detection(d) => {
                writeln!(s, "pairs {}", d.pairs).unwrap();
                writeln!(s, "map {:.6}", d.map).unwrap();
                for c in &d.classes {
                    match c.ap {
                        Some(ap) => writeln!(s, "ap_{} {ap:.6}", c.class).unwrap(),
                        None => writeln!(s, "ap_{} none", c.class).unwrap(),
                    }
                }
            }
        }
        s
    }

    /// ROC points or per-class PR curves as CSV with a header row.
    pub fn curves_csv(&self) -> String {
        let mut s = String::new();
        match self {
            EvalReport::Recognition(r) => {
                s.push_str("threshold,tpr,fpr,accuracy,precision\n");
                for p in &r.roc.points {
                    writeln!(
                        s,
                        "{},{},{},{},{}",
                        p.threshold, p.tpr, p.fpr, p.accuracy, p.precision
                    )
                    .unwrap();
                }
            }
            EvalReport::Detection(d) => {
                s.push_str("class,recall,precision,confidence\n");
                for c in &d.classes {
                    for p in &c.curve {
                        writeln!(s, "{},{},{},{}", c.class, p.recall, p.precision, p.confidence)
                            .unwrap();
                    }
                }
            }
        }
        s
    }

    pub fn curves_file_name(&self) -> &'static str {
        match self {
            EvalReport::Recognition(_) => "roc.csv",
            EvalReport::Detection(_) => "pr.csv",
        }
    }
}

/// Decoded boxes of batch item `n` with confidence at least `conf_threshold`,
/// in pixels of a `width x height` target, after NMS.
#[allow(clippy::too_many_arguments)]
pub fn detections(
    head: &Tensor,
    n: usize,
    priors: &[AnchorPrior],
    width: u32,
    height: u32,
    conf_threshold: f64,
    nms_threshold: f64,
    image_id: usize,
    class: &str,
) -> Result<Vec<DetectionRecord>> {
    let grid = head.shape()[2];
    let preds = raw_predictions(head, n, priors.len())?;
    let mut out = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        let cell = i / priors.len();
        let b = decode_anchor(p, (cell % grid, cell / grid), &priors[i % priors.len()]);
        if b.conf >= conf_threshold {
            out.push(DetectionRecord {
                image_id,
                class: class.to_string(),
                rect: grid_to_pixel(&b, width, height, grid),
                confidence: b.conf,
            });
        }
    }
    Ok(nms(&out, nms_threshold))
}

fn side_classes(data: &Dataset, side: Side) -> BTreeSet<&str> {
    data.split.side(side).iter().map(String::as_str).collect()
}

fn check_side(allowed: &BTreeSet<&str>, class: &str, side: Side) -> Result<()> {
    if !allowed.contains(class) {
        return Err(Error::Sampling(format!(
            "class '{class}' is not on the {side:?} side of the split"
        )));
    }
    Ok(())
}

fn detector(model: &Model) -> Result<&Detector> {
    match model {
        Model::Detector(d) => Ok(d),
        Model::Recognizer(_) => Err(Error::Config("a detector is required".into())),
    }
}

pub fn evaluate(cfg: &RunConfig, data: &Dataset, model: &Model, side: Side) -> Result<EvalReport> {
    if model.task() != cfg.run.task {
        return Err(Error::Config(format!(
            "config task is {} but the model is for {}",
            cfg.run.task,
            model.task()
        )));
    }
    let allowed = side_classes(data, side);
    let mut sampler = PairSampler::new(
        &data.manifest,
        &data.split,
        side,
        stream_rng(cfg.run.seed, STREAM_EVAL),
    );
    let mut cache = ImageCache::new();
    let m = &data.manifest;
    let (qs, ts) = model.input_sizes();
    let n = cfg.eval.pairs;
    match model {
        Model::Recognizer(_) => {
            let mut scores = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            let mut left = n;
            while left > 0 {
                let k = left.min(EVAL_BATCH);
                let (mut q, mut t) = (Vec::new(), Vec::new());
                for _ in 0..k {
                    let p = sampler.sample_recognition_pair()?;
                    check_side(&allowed, &p.query_class, side)?;
                    check_side(&allowed, &p.target_class, side)?;
                    q.push(cache.instance(m, p.query, qs)?);
                    t.push(cache.instance(m, p.target, ts)?);
                    labels.push(p.matched);
                }
                let out = model.forward(&Tensor::stack(&q)?, &Tensor::stack(&t)?)?;
                scores.extend_from_slice(out.data());
                left -= k;
            }
            let roc = roc_sweep(&scores, &labels, cfg.eval.roc_thresholds)?;
            Ok(EvalReport::Recognition(RecognitionEval { pairs: n, roc }))
        }
        Model::Detector(det) => {
            let priors = cfg.priors()?;
            if priors.len() != det.spec.anchors {
                return Err(Error::Config(format!(
                    "{} priors configured for a {}-anchor detector",
                    priors.len(),
                    det.spec.anchors
                )));
            }
            let mut records: Vec<DetectionRecord> = Vec::new();
            let mut gts: Vec<(String, GroundTruth)> = Vec::new();
            let mut id = 0;
            while id < n {
                let k = (n - id).min(EVAL_BATCH);
                let (mut q, mut t, mut meta) = (Vec::new(), Vec::new(), Vec::new());
                for j in 0..k {
                    let s = sampler.sample_detection_pair()?;
                    check_side(&allowed, &s.query_class, side)?;
                    check_side(&allowed, &s.target_class, side)?;
                    q.push(cache.instance(m, s.query, qs)?);
                    t.push(cache.image(m, s.target, ts)?);
                    for r in &s.gts {
                        gts.push((s.query_class.clone(), GroundTruth { image_id: id + j, rect: *r }));
                    }
                    let e = &m.entries[s.target];
                    meta.push((e.width, e.height, s.query_class));
                }
                let head = model.forward(&Tensor::stack(&q)?, &Tensor::stack(&t)?)?;
                for (j, (w, h, class)) in meta.into_iter().enumerate() {
                    records.extend(detections(
                        &head,
                        j,
                        &priors,
                        w,
                        h,
                        cfg.eval.conf_threshold,
                        cfg.eval.nms_threshold,
                        id + j,
                        &class,
                    )?);
                }
                id += k;
            }
            let classes: Vec<ApResult> = data
                .split
                .side(side)
                .iter()
                .map(|c| {
                    let recs: Vec<DetectionRecord> =
                        records.iter().filter(|r| &r.class == c).cloned().collect();
                    let g: Vec<GroundTruth> =
                        gts.iter().filter(|(gc, _)| gc == c).map(|(_, g)| g.clone()).collect();
                    average_precision(c, &recs, &g, cfg.eval.iou_threshold, cfg.eval.ap_method)
                })
                .collect();
            let map = mean_ap(&classes)?;
            Ok(EvalReport::Detection(DetectionEval {
                pairs: n,
                classes,
                map,
            }))
        }
    }
}

/// Fraction of `count` matched pairs from `side` whose most confident box
/// overlaps a ground truth with IoU above `cfg.eval.iou_threshold`.
pub fn localization_rate(
    cfg: &RunConfig,
    data: &Dataset,
    model: &Model,
    side: Side,
    count: usize,
) -> Result<f64> {
    let det = detector(model)?;
    let priors = cfg.priors()?;
    if count == 0 {
        return Err(Error::Metric("localization needs at least one pair".into()));
    }
    let mut sampler = PairSampler::new(
        &data.manifest,
        &data.split,
        side,
        stream_rng(cfg.run.seed, STREAM_LOCALIZE),
    );
    let mut cache = ImageCache::new();
    let m = &data.manifest;
    let (qs, ts) = model.input_sizes();
    let mut hits = 0;
    let mut seen = 0;
    while seen < count {
        let (mut q, mut t, mut truths) = (Vec::new(), Vec::new(), Vec::new());
        while q.len() < EVAL_BATCH.min(count - seen) {
            let s = sampler.sample_detection_pair()?;
            if s.gts.is_empty() {
                continue;
            }
            q.push(cache.instance(m, s.query, qs)?);
            t.push(cache.image(m, s.target, ts)?);
            let e = &m.entries[s.target];
            truths.push((e.width, e.height, s.gts));
        }
        let head = det.forward(&Tensor::stack(&q)?, &Tensor::stack(&t)?)?;
        for (j, (w, h, g)) in truths.iter().enumerate() {
            let best = detections(&head, j, &priors, *w, *h, 0.0, 1.0, j, "")?
                .into_iter()
                .next();
            if let Some(b) = best {
                if g.iter().any(|r| iou(r, &b.rect) > cfg.eval.iou_threshold) {
                    hits += 1;
                }
            }
        }
        seen += truths.len();
    }
    Ok(hits as f64 / count as f64)
}
