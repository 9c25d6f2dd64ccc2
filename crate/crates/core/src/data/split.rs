use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::manifest::DatasetManifest;
use crate::error::{Error, Result};

/// Class-disjoint train/test partition.
///
/// Stored as TOML:
///
/// ```toml
/// train = ["bird", "boat"]
/// test = ["cow"]
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitViolation {
    /// Class present on both sides.
    Overlap(String),
    /// Class not declared by the manifest.
    Undeclared(String),
}

impl fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitViolation::Overlap(c) => write!(f, "class '{c}' is in both train and test"),
            SplitViolation::Undeclared(c) => write!(f, "class '{c}' is not declared"),
        }
    }
}

pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

impl ClassSplit {
    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Train => &self.train,
            Side::Test => &self.test,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("split serializes")
    }

    /// VOC with cow, sheep, cat and aeroplane held out.
    pub fn voc() -> Self {
        let unseen = ["cow", "sheep", "cat", "aeroplane"];
        ClassSplit {
            train: VOC_CLASSES
                .iter()
                .filter(|c| !unseen.contains(c))
                .map(|c| c.to_string())
                .collect(),
            test: unseen.iter().map(|c| c.to_string()).collect(),
        }
    }

    /// Logo-style split: 210 training and 125 test categories.
    pub fn openlogo() -> Self {
        let names: Vec<String> = (0..335).map(|i| format!("logo{i:03}")).collect();
        ClassSplit {
            train: names[..210].to_vec(),
            test: names[210..].to_vec(),
        }
    }

    /// First `n_train` of `classes` for training, the rest for testing.
    pub fn first_n(classes: &[String], n_train: usize) -> Self {
        let n = n_train.min(classes.len());
        ClassSplit {
            train: classes[..n].to_vec(),
            test: classes[n..].to_vec(),
        }
    }
}

/// Empty when the split is class-disjoint and uses only declared classes.
pub fn validate_split(manifest: &DatasetManifest, split: &ClassSplit) -> Vec<SplitViolation> {
    let declared: BTreeSet<&str> = manifest.classes.iter().map(String::as_str).collect();
    let train: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    let test: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
    let mut out: Vec<SplitViolation> = train
        .intersection(&test)
        .map(|c| SplitViolation::Overlap(c.to_string()))
        .collect();
    out.extend(
        train
            .union(&test)
            .filter(|c| !declared.contains(*c))
            .map(|c| SplitViolation::Undeclared(c.to_string())),
    );
    out
}
