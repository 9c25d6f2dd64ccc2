//! Line-oriented dataset manifests.
//!
//! ```text
//! # comments and blank lines are ignored
//! !classes cow sheep cat
//! images/0001.png cow 10,20,30,40 50,60,10,10
//! images/0002.png cat
//! ```
//!
//! Each record is an image path relative to the dataset root, a class label
//! and zero or more `x,y,w,h` pixel boxes (top-left corner and size). The
//! root defaults to the manifest's directory and can be overridden with a
//! `!root <dir>` line, itself relative to the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::Rect;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub boxes: Vec<Rect>,
    pub width: u32,
    pub height: u32,
    /// 1-based line in the manifest file, 0 for in-memory entries.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn full_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn per_class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.classes.iter().map(|c| (c.clone(), 0)).collect();
        for e in &self.entries {
            *counts.entry(e.label.clone()).or_default() += 1;
        }
        counts
    }

    /// Serializes to the manifest text format, with paths relative to `root`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.classes.is_empty() {
            out.push_str("!classes ");
            out.push_str(&self.classes.join(" "));
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&e.path.to_string_lossy());
            out.push(' ');
            out.push_str(&e.label);
            for b in &e.boxes {
                out.push_str(&format!(" {},{},{},{}", b.x, b.y, b.w, b.h));
            }
            out.push('\n');
        }
        out
    }

    /// Writes the manifest next to its images, at `root/<file_name>`.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_box(token: &str) -> Option<Rect> {
    let v: Vec<f64> = token
        .split(',')
        .map(|p| p.trim().parse::<f64>().ok())
        .collect::<Option<_>>()?;
    match v[..] {
        [x, y, w, h] if v.iter().all(|c| c.is_finite()) => Some(Rect::new(x, y, w, h)),
        _ => None,
    }
}

/// Parses and validates a manifest: every image must exist, every label must
/// be declared and every box must lie inside its image.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let fail = |line: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut manifest = DatasetManifest {
        root: base.clone(),
        ..Default::default()
    };
    let mut declared = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let head = tokens.next().expect("non-empty line");
        match head {
            "!classes" => {
                if declared {
                    return Err(fail(lineno, "class universe declared twice".into()));
                }
                declared = true;
                manifest.classes = tokens.map(str::to_string).collect();
                let mut sorted = manifest.classes.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != manifest.classes.len() {
                    return Err(fail(lineno, "duplicate class in universe".into()));
                }
            }
            "!root" => {
                let dir = tokens
                    .next()
                    .ok_or_else(|| fail(lineno, "!root needs a directory".into()))?;
                manifest.root = base.join(dir);
            }
            _ => {
                let label = tokens
                    .next()
                    .ok_or_else(|| fail(lineno, format!("record '{head}' has no class label")))?;
                if !declared {
                    return Err(fail(lineno, "record before the !classes declaration".into()));
                }
                if !manifest.classes.iter().any(|c| c == label) {
                    return Err(fail(lineno, format!("label '{label}' not in the class universe")));
                }
                let boxes = tokens
                    .map(|t| parse_box(t).ok_or_else(|| fail(lineno, format!("malformed box '{t}'"))))
                    .collect::<Result<Vec<_>>>()?;
                let rel = PathBuf::from(head);
                let full = manifest.root.join(&rel);
                if !full.is_file() {
                    return Err(fail(lineno, format!("image {} does not exist", full.display())));
                }
                let (width, height) = image::image_dimensions(&full)
                    .map_err(|e| fail(lineno, format!("cannot read {}: {e}", full.display())))?;
                for b in &boxes {
                    let inside = b.w > 0.0
                        && b.h > 0.0
                        && b.x >= 0.0
                        && b.y >= 0.0
                        && b.x + b.w <= width as f64
                        && b.y + b.h <= height as f64;
                    if !inside {
                        return Err(fail(
                            lineno,
                            format!(
                                "box {},{},{},{} exceeds the {width}x{height} image {head}",
                                b.x, b.y, b.w, b.h
                            ),
                        ));
                    }
                }
                manifest.entries.push(ManifestEntry {
                    path: rel,
                    label: label.to_string(),
                    boxes,
                    width,
                    height,
                    line: lineno,
                });
            }
        }
    }
    Ok(manifest)
}
