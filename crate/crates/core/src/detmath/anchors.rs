use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::sigmoid_scalar;

/// Reference box shape per grid cell, in cell units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub w: f64,
    pub h: f64,
}

impl AnchorPrior {
    pub fn new(w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::Input(format!("anchor prior {w}x{h} must be positive")));
        }
        Ok(AnchorPrior { w, h })
    }

    /// Five priors covering square and 2:1 shapes from one to four cells.
    pub fn defaults() -> Vec<AnchorPrior> {
        [(1.0, 1.0), (2.0, 2.0), (3.5, 3.5), (2.0, 4.0), (4.0, 2.0)]
            .into_iter()
            .map(|(w, h)| AnchorPrior { w, h })
            .collect()
    }
}

/// Raw network outputs for one anchor of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RawPrediction {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub to: f64,
}

/// Regression part of a [`RawPrediction`]: what a ground truth encodes to.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AnchorOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl AnchorOffsets {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

/// Box with center `(x, y)` and size `(w, h)` in grid-cell units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h, conf: 1.0 }
    }

    /// Rescales every coordinate, e.g. by `image_size / S` to go from grid
    /// units to pixels.
    pub fn scaled(&self, sx: f64, sy: f64) -> BBox {
        BBox {
            x: self.x * sx,
            y: self.y * sy,
            w: self.w * sx,
            h: self.h * sy,
            conf: self.conf,
        }
    }

    /// Intersection over union of two center-format boxes.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w / 2.0).min(other.x + other.w / 2.0)
            - (self.x - self.w / 2.0).max(other.x - other.w / 2.0);
        let iy = (self.y + self.h / 2.0).min(other.y + other.h / 2.0)
            - (self.y - self.h / 2.0).max(other.y - other.h / 2.0);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.w * self.h + other.w * other.h - inter)
    }
}

pub fn decode_anchor(t: &RawPrediction, cell: (usize, usize), prior: &AnchorPrior) -> BBox {
    BBox {
        x: sigmoid_scalar(t.tx) + cell.0 as f64,
        y: sigmoid_scalar(t.ty) + cell.1 as f64,
        w: prior.w * t.tw.exp(),
        h: prior.h * t.th.exp(),
        conf: sigmoid_scalar(t.to),
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`decode_anchor`] for the four box coordinates.
pub fn encode_anchor(gt: &BBox, cell: (usize, usize), prior: &AnchorPrior) -> Result<AnchorOffsets> {
    let fx = gt.x - cell.0 as f64;
    let fy = gt.y - cell.1 as f64;
    if !(fx > 0.0 && fx < 1.0 && fy > 0.0 && fy < 1.0) {
        return Err(Error::Input(format!(
            "box center ({}, {}) is not strictly inside cell {cell:?}",
            gt.x, gt.y
        )));
    }
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::Input(format!("box size {}x{} must be positive", gt.w, gt.h)));
    }
    Ok(AnchorOffsets {
        tx: logit(fx),
        ty: logit(fy),
        tw: (gt.w / prior.w).ln(),
        th: (gt.h / prior.h).ln(),
    })
}

/// Grid cell holding a center coordinate; a center on a boundary belongs to
/// the lower-index cell.
pub fn cell_of(coord: f64, grid: usize) -> usize {
    let c = coord.ceil() as isize - 1;
    c.clamp(0, grid as isize - 1) as usize
}

/// Offset fractions closer than this to a cell edge are pulled inside before
/// taking the logit.
const EDGE_MARGIN: f64 = 1e-6;

/// Positive (cell, anchor) entry and what it regresses to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assigned {
    pub gt: BBox,
    pub offsets: AnchorOffsets,
    pub iou: f64,
}

/// Which anchors are responsible for a ground truth, indexed
/// `(cy * S + cx) * B + anchor`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetAssignment {
    pub grid: usize,
    pub anchors: usize,
    pub entries: Vec<Option<Assigned>>,
}

impl TargetAssignment {
    pub fn index(&self, cx: usize, cy: usize, anchor: usize) -> usize {
        (cy * self.grid + cx) * self.anchors + anchor
    }

    pub fn is_positive(&self, idx: usize) -> bool {
        self.entries[idx].is_some()
    }

    pub fn obj_mask(&self) -> Vec<bool> {
        self.entries.iter().map(Option::is_some).collect()
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

/// Marks anchor `j` of cell `i` positive when the ground-truth center lies in
/// cell `i` and an anchor-shaped box centered on the ground truth overlaps it
/// with IoU above 0.5.
pub fn assign_targets(gts: &[BBox], priors: &[AnchorPrior], grid: usize) -> Result<TargetAssignment> {
    if priors.is_empty() || grid == 0 {
        return Err(Error::Input("assignment needs at least one prior and one cell".into()));
    }
    let mut out = TargetAssignment {
        grid,
        anchors: priors.len(),
        entries: vec![None; grid * grid * priors.len()],
    };
    let s = grid as f64;
    for gt in gts {
        if !(gt.x >= 0.0 && gt.x <= s && gt.y >= 0.0 && gt.y <= s && gt.w > 0.0 && gt.h > 0.0) {
            return Err(Error::Input(format!("ground truth {gt:?} outside the {grid}x{grid} grid")));
        }
        let cx = cell_of(gt.x, grid);
        let cy = cell_of(gt.y, grid);
        let inside = |v: f64, c: usize| (v - c as f64).clamp(EDGE_MARGIN, 1.0 - EDGE_MARGIN) + c as f64;
        let centered = BBox {
            x: inside(gt.x, cx),
            y: inside(gt.y, cy),
            ..*gt
        };
        for (j, prior) in priors.iter().enumerate() {
            let anchor_box = BBox::new(gt.x, gt.y, prior.w, prior.h);
            let iou = anchor_box.iou(gt);
            if iou <= 0.5 {
                continue;
            }
            let idx = out.index(cx, cy, j);
            let candidate = Assigned {
                gt: *gt,
                offsets: encode_anchor(&centered, (cx, cy), prior)?,
                iou,
            };
            let replace = match &out.entries[idx] {
                None => true,
                Some(cur) => prefer(&candidate, cur),
            };
            if replace {
                out.entries[idx] = Some(candidate);
            }
        }
    }
    Ok(out)
}

/// Order-independent tie-break between two ground truths claiming one anchor.
fn prefer(a: &Assigned, b: &Assigned) -> bool {
    if a.iou != b.iou {
        return a.iou > b.iou;
    }
    let key = |x: &Assigned| [x.gt.x, x.gt.y, x.gt.w, x.gt.h];
    key(a)
        .iter()
        .zip(key(b).iter())
        .find(|(p, q)| p != q)
        .is_some_and(|(p, q)| p < q)
}
