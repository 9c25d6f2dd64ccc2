//! Recognition metrics (ROC sweep) and detection metrics (IoU, NMS, AP, mAP).

mod detection;
mod roc;

pub use detection::{
    average_precision, iou, mean_ap, nms, ApMethod, ApResult, DetectionRecord, GroundTruth,
    PrPoint, Rect,
};
pub use roc::{roc_sweep, RocPoint, RocReport};
