//! Run configuration, stored as TOML (`key = value` lines under `[section]`
//! headers). Any omitted key takes its per-task default.
//!
//! ```toml
//! [run]
//! task = "detection"
//! seed = 7
//! out_dir = "runs/det"
//!
//! [model]
//! preset = "desk"
//! mask = "1,2,4"
//!
//! [optimizer]
//! lr = 0.0001
//!
//! [data]
//! manifest = "shapes/manifest.txt"
//! split = "shapes/split.toml"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{DetectorSpec, JointPlacementMask, Preset, RecognizerSpec};
use crate::data::SyntheticShapeConfig;
use crate::detmath::{AnchorPrior, LossWeights};
use crate::error::{Error, Result};
use crate::metrics::ApMethod;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Recognition,
    Detection,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Recognition => "recognition",
            Task::Detection => "detection",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recognition" => Ok(Task::Recognition),
            "detection" => Ok(Task::Detection),
            other => Err(Error::Config(format!(
                "unknown task '{other}', expected recognition or detection"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    /// Enabled joint layers, e.g. `"1,2,4"`. Empty means the task default.
    pub mask: String,
    /// Overrides the preset's channel divisor when non-zero.
    pub width_div: usize,
    /// Anchor priors `[w, h]` in grid cells; their count is B.
    pub anchors: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero means one pass over the training instances per epoch.
    pub batches_per_epoch: usize,
    /// Global gradient-norm cap; zero disables clipping.
    pub clip_norm: f64,
    /// Checkpoint every this many epochs; zero writes only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub manifest: PathBuf,
    pub split: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Pairs drawn from the evaluated split.
    pub pairs: usize,
    pub iou_threshold: f64,
    pub nms_threshold: f64,
    pub conf_threshold: f64,
    pub ap_method: ApMethod,
    pub roc_thresholds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(flatten)]
    pub shapes: SyntheticShapeConfig,
    /// The first this-many classes form the training side of the split.
    pub train_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub loss: LossWeights,
    pub data: DataSection,
    pub eval: EvalSection,
    pub synthetic: SyntheticSection,
}

/// Either network spec, as selected by the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ModelSpec {
    Recognition(RecognizerSpec),
    Detection(DetectorSpec),
}

impl RunConfig {
    /// Defaults for a task: lr 0.005, 200 epochs and batch 64 for recognition;
    /// lr 1e-4, momentum 0.9, 160 epochs and batch 16 for detection.
    pub fn defaults(task: Task) -> Self {
        let optimizer = match task {
            Task::Recognition => OptimizerSection {
                lr: 0.005,
                momentum: 0.9,
                epochs: 200,
                batch_size: 64,
                batches_per_epoch: 0,
                clip_norm: 0.0,
                checkpoint_every: 0,
            },
            Task::Detection => OptimizerSection {
                lr: 1e-4,
                momentum: 0.9,
                epochs: 160,
                batch_size: 16,
                batches_per_epoch: 0,
                clip_norm: 0.0,
                checkpoint_every: 0,
            },
        };
        RunConfig {
            run: RunSection {
                task,
                seed: 0,
                out_dir: PathBuf::from("runs"),
            },
            model: ModelSection {
                preset: Preset::Desk,
                mask: String::new(),
                width_div: 0,
                anchors: AnchorPrior::defaults().iter().map(|p| [p.w, p.h]).collect(),
            },
            optimizer,
            loss: LossWeights::default(),
            data: DataSection {
                manifest: PathBuf::from("manifest.txt"),
                split: PathBuf::from("split.toml"),
            },
            eval: EvalSection {
                pairs: 200,
                iou_threshold: 0.5,
                nms_threshold: 0.45,
                conf_threshold: 0.005,
                ap_method: ApMethod::AllPoints,
                roc_thresholds: 20,
            },
            synthetic: SyntheticSection {
                shapes: SyntheticShapeConfig::default(),
                train_classes: 6,
            },
        }
    }

    /// Parses TOML text, filling omitted keys from the task defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let task = user
            .get("run")
            .and_then(|r| r.get("task"))
            .and_then(|t| t.as_str())
            .ok_or_else(|| Error::Config("missing [run] task".into()))?
            .parse::<Task>()?;
        let mut merged = toml::Table::try_from(Self::defaults(task))
            .map_err(|e| Error::Config(format!("{e}")))?;
        merge(&mut merged, user);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate_values()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg =
            Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.manifest = base.join(&cfg.data.manifest);
        cfg.data.split = base.join(&cfg.data.split);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate_values(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", o.momentum)));
        }
        if o.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(o.clip_norm >= 0.0) {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", o.clip_norm)));
        }
        if self.model.anchors.is_empty() {
            return Err(Error::Config("at least one anchor prior is required".into()));
        }
        self.priors()?;
        self.loss.validate()?;
        let e = &self.eval;
        for (name, v) in [
            ("iou_threshold", e.iou_threshold),
            ("nms_threshold", e.nms_threshold),
            ("conf_threshold", e.conf_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if e.roc_thresholds < 2 {
            return Err(Error::Config("roc_thresholds must be at least 2".into()));
        }
        self.mask()?;
        Ok(())
    }

    /// Checks everything, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        for p in [&self.data.manifest, &self.data.split] {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn priors(&self) -> Result<Vec<AnchorPrior>> {
        self.model
            .anchors
            .iter()
            .map(|&[w, h]| AnchorPrior::new(w, h).map_err(|e| Error::Config(e.to_string())))
            .collect()
    }

    pub fn mask(&self) -> Result<JointPlacementMask> {
        let m = self.model.mask.trim();
        match self.run.task {
            Task::Detection if m.is_empty() => Ok(JointPlacementMask::detector_default()),
            Task::Detection => m.parse(),
            Task::Recognition => {
                let compact: String = m.chars().filter(|c| !c.is_whitespace()).collect();
                if compact.is_empty() || compact == "1,2,3" {
                    Ok(JointPlacementMask::all(3))
                } else {
                    Err(Error::Config(format!(
                        "the recognizer always uses joint layers 1,2,3, got mask '{m}'"
                    )))
                }
            }
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let div = self.model.width_div;
        Ok(match self.run.task {
            Task::Recognition => {
                let spec = match (self.model.preset, div) {
                    (p, 0) => RecognizerSpec::preset(p),
                    (Preset::Paper, d) => RecognizerSpec::alexnet(224, d, 0.01),
                    (Preset::Desk, d) => RecognizerSpec::alexnet(64, d, 0.01),
                };
                ModelSpec::Recognition(spec)
            }
            Task::Detection => {
                let b = self.model.anchors.len();
                let mask = self.mask()?;
                let spec = match (self.model.preset, div) {
                    (p, 0) => DetectorSpec::preset(p, b, mask),
                    (Preset::Paper, d) => DetectorSpec::darknet19(448, 224, d, 2, b, mask),
                    (Preset::Desk, d) => DetectorSpec::darknet19(112, 56, d, 1, b, mask),
                };
                ModelSpec::Detection(spec)
            }
        })
    }

    /// SHA-256 over everything that fixes the trained parameters' meaning:
    /// the network spec (mask included) and the anchor priors.
    pub fn digest(&self) -> Result<String> {
        let spec = self.model_spec()?;
        let payload = serde_json::to_vec(&(&spec, &self.model.anchors))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(hex(&Sha256::digest(&payload)))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
