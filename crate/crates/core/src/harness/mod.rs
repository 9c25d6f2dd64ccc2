//! Configuration, checkpoints, training and evaluation runs, and the
//! joint-layer ablation sweep. The `cmd_*` functions back the CLI commands.

mod checkpoint;
mod config;
mod eval;
mod model;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, ParamInfo, RngState,
    CHECKPOINT_VERSION,
};
pub use config::{
    DataSection, EvalSection, ModelSection, ModelSpec, OptimizerSection, RunConfig, RunSection,
    SyntheticSection, Task,
};
pub use eval::{
    detections, evaluate, localization_rate, DetectionEval, EvalReport, RecognitionEval,
};
pub use model::Model;
pub use train::{init_model, train, TrainOutcome};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::JointPlacementMask;
use crate::data::{
    generate_synthetic, load_manifest, validate_split, ClassSplit, DatasetManifest, Side,
};
use crate::error::{Error, Result};

/// A manifest together with a split validated against it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub split: ClassSplit,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, split: ClassSplit) -> Result<Self> {
        let violations = validate_split(&manifest, &split);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::Config(format!("invalid split: {}", list.join("; "))));
        }
        Ok(Dataset { manifest, split })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(load_manifest(&cfg.data.manifest)?, ClassSplit::load(&cfg.data.split)?)
    }

    /// Annotated instances (or whole unannotated images) on one side.
    pub fn instances(&self, side: Side) -> usize {
        let classes = self.split.side(side);
        self.manifest
            .entries
            .iter()
            .filter(|e| classes.contains(&e.label))
            .map(|e| e.boxes.len().max(1))
            .sum()
    }
}

/// Trains from scratch, or from `resume` when given.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let data = Dataset::load(cfg)?;
    let ck = resume.map(load_checkpoint).transpose()?;
    train(cfg, &data, ck.as_ref())
}

/// Loads a checkpoint trained under `cfg`'s architecture.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model> {
    let ck = load_checkpoint(path)?;
    ck.check_digest(&cfg.digest()?)?;
    ck.to_model()
}

/// Evaluates on the test classes and writes `out_dir/metrics.txt` (one
/// `name value` per line) and `out_dir/eval.json` (the full report).
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let data = Dataset::load(cfg)?;
    let model = load_model(cfg, checkpoint)?;
    let report = evaluate(cfg, &data, &model, Side::Test)?;
    fs::create_dir_all(&cfg.run.out_dir)?;
    fs::write(cfg.run.out_dir.join("metrics.txt"), report.metrics_text())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Metric(e.to_string()))?;
    fs::write(cfg.run.out_dir.join("eval.json"), json)?;
    Ok(report)
}

/// Reads `dir/eval.json` and writes the ROC (`roc.csv`) or per-class PR
/// (`pr.csv`) curves next to it. Returns the written path.
pub fn cmd_report(dir: &Path) -> Result<PathBuf> {
    let src = dir.join("eval.json");
    let text = fs::read_to_string(&src)
        .map_err(|e| Error::Config(format!("{}: {e}", src.display())))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| Error::Metric(format!("{}: {e}", src.display())))?;
    let path = dir.join(report.curves_file_name());
    fs::write(&path, report.curves_csv())?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mask: JointPlacementMask,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// One row per mask: a mark per joint layer, then the mAP.
    pub fn to_table(&self) -> String {
        let mut s = String::from("JL1 JL2 JL3 JL4 JL5 mAP\n");
        for r in &self.rows {
            for &on in r.mask.flags() {
                s.push_str(if on { " x  " } else { " -  " });
            }
            writeln!(s, "{:.4}", r.map).unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mask,map\n");
        for r in &self.rows {
            writeln!(s, "\"{}\",{}", r.mask, r.map).unwrap();
        }
        s
    }
}

/// Trains and evaluates a detector per mask under one seed and config, and
/// writes `ablation.txt` and `ablation.csv` to `out_dir`.
pub fn cmd_ablate(cfg: &RunConfig, masks: &[JointPlacementMask]) -> Result<AblationReport> {
    if cfg.run.task != Task::Detection {
        return Err(Error::Config("ablation runs the detection task".into()));
    }
    if masks.len() < 2 {
        return Err(Error::Config(format!(
            "ablation needs at least two masks, got {}",
            masks.len()
        )));
    }
    let data = Dataset::load(cfg)?;
    let mut rows = Vec::with_capacity(masks.len());
    for mask in masks {
        let mut run = cfg.clone();
        run.model.mask = mask.to_string();
        run.run.out_dir = cfg.run.out_dir.join(format!("mask_{}", mask.to_string().replace(',', "_")));
        log::info!("ablation: mask {mask}");
        let outcome = train(&run, &data, None)?;
        let EvalReport::Detection(d) = evaluate(&run, &data, &outcome.model, Side::Test)? else {
            unreachable!("detection config yields a detection report");
        };
        rows.push(AblationRow {
            mask: mask.clone(),
            map: d.map,
        });
    }
    let report = AblationReport { rows };
    fs::create_dir_all(&cfg.run.out_dir)?;
    fs::write(cfg.run.out_dir.join("ablation.txt"), report.to_table())?;
    fs::write(cfg.run.out_dir.join("ablation.csv"), report.to_csv())?;
    Ok(report)
}

/// Writes the synthetic dataset to `out_dir` (images, `manifest.txt`) with a
/// class split in `split.toml`.
pub fn cmd_gen_synthetic(
    section: &SyntheticSection,
    out_dir: &Path,
    seed: u64,
) -> Result<Dataset> {
    let n = section.shapes.classes;
    if section.train_classes < 2 || section.train_classes + 2 > n {
        return Err(Error::Config(format!(
            "train_classes must leave at least two of {n} classes on each side, got {}",
            section.train_classes
        )));
    }
    let manifest = generate_synthetic(&section.shapes, out_dir, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let split = ClassSplit::first_n(&manifest.classes, section.train_classes);
    fs::write(out_dir.join("split.toml"), split.to_toml())?;
    Dataset::new(manifest, split)
}
