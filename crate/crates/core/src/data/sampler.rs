//! Pair sampling for both tasks. Each draw is a match with probability 1/2.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::DatasetManifest;
use crate::data::split::{ClassSplit, Side};
use crate::detmath::BBox;
use crate::error::{Error, Result};
use crate::metrics::Rect;

/// An image, optionally restricted to one of its annotated boxes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instance {
    pub entry: usize,
    pub region: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub query: Instance,
    pub target: Instance,
    pub query_class: String,
    pub target_class: String,
    pub matched: bool,
}

impl PairSample {
    pub fn label(&self) -> f64 {
        if self.matched {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSample {
    /// Always restricted to an annotated box.
    pub query: Instance,
    pub target: usize,
    pub query_class: String,
    pub target_class: String,
    /// Query-class boxes in the target, in pixels. Empty for negatives.
    pub gts: Vec<Rect>,
}

/// Pixel box to grid units for an `S x S` grid over a `width x height` image.
pub fn pixel_to_grid(rect: &Rect, width: u32, height: u32, grid: usize) -> BBox {
    let (cx, cy) = rect.center();
    let sx = grid as f64 / width as f64;
    let sy = grid as f64 / height as f64;
    BBox::new(cx * sx, cy * sy, rect.w * sx, rect.h * sy)
}

pub fn grid_to_pixel(b: &BBox, width: u32, height: u32, grid: usize) -> Rect {
    let sx = width as f64 / grid as f64;
    let sy = height as f64 / grid as f64;
    Rect::from_center(b.x * sx, b.y * sy, b.w * sx, b.h * sy)
}

/// Draws pairs from one side of a class split. Owns its RNG.
pub struct PairSampler<'a> {
    manifest: &'a DatasetManifest,
    /// Every instance (box, or whole image if unannotated) per class.
    instances: BTreeMap<String, Vec<Instance>>,
    /// Boxed instances per class.
    boxed: BTreeMap<String, Vec<Instance>>,
    /// Whole images per class.
    images: BTreeMap<String, Vec<usize>>,
    rng: ChaCha8Rng,
}

impl<'a> PairSampler<'a> {
    pub fn new(
        manifest: &'a DatasetManifest,
        split: &ClassSplit,
        side: Side,
        rng: ChaCha8Rng,
    ) -> Self {
        let allowed = split.side(side);
        let mut instances: BTreeMap<String, Vec<Instance>> = BTreeMap::new();
        let mut boxed: BTreeMap<String, Vec<Instance>> = BTreeMap::new();
        let mut images: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            if !allowed.contains(&e.label) {
                continue;
            }
            images.entry(e.label.clone()).or_default().push(i);
            let list = instances.entry(e.label.clone()).or_default();
            if e.boxes.is_empty() {
                list.push(Instance { entry: i, region: None });
            } else {
                for r in 0..e.boxes.len() {
                    let inst = Instance { entry: i, region: Some(r) };
                    list.push(inst);
                    boxed.entry(e.label.clone()).or_default().push(inst);
                }
            }
        }
        PairSampler {
            manifest,
            instances,
            boxed,
            images,
            rng,
        }
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Classes with at least one instance on this side.
    pub fn classes(&self) -> Vec<&str> {
        self.instances.keys().map(String::as_str).collect()
    }

    fn pick_other_class<'m>(
        rng: &mut ChaCha8Rng,
        keys: &'m [&'m String],
        not: &str,
    ) -> &'m String {
        let others: Vec<&&String> = keys.iter().filter(|k| k.as_str() != not).collect();
        others.choose(rng).expect("at least two classes")
    }

    fn pick_instance(&mut self, class: &str, avoid: Option<Instance>) -> Instance {
        let list = &self.instances[class];
        let candidates: Vec<&Instance> = match avoid {
            Some(a) if list.len() > 1 => list.iter().filter(|&&i| i != a).collect(),
            _ => list.iter().collect(),
        };
        **candidates.choose(&mut self.rng).expect("class has instances")
    }

    fn draw_target(&mut self, query: Instance, query_class: &str) -> PairSample {
        let matched = self.rng.random_bool(0.5);
        let target_class = if matched {
            query_class.to_string()
        } else {
            let keys: Vec<&String> = self.instances.keys().collect();
            Self::pick_other_class(&mut self.rng, &keys, query_class).clone()
        };
        let target = self.pick_instance(&target_class, matched.then_some(query));
        PairSample {
            query,
            target,
            query_class: query_class.to_string(),
            target_class,
            matched,
        }
    }

    fn ensure_two(&self, map_len: usize, what: &str) -> Result<()> {
        if map_len < 2 {
            return Err(Error::Sampling(format!(
                "need at least two classes with {what}, found {map_len}"
            )));
        }
        Ok(())
    }

    pub fn sample_recognition_pair(&mut self) -> Result<PairSample> {
        self.ensure_two(self.instances.len(), "instances")?;
        let keys: Vec<String> = self.instances.keys().cloned().collect();
        let qc = keys.choose(&mut self.rng).expect("non-empty").clone();
        let q = *self.instances[&qc].choose(&mut self.rng).expect("non-empty");
        Ok(self.draw_target(q, &qc))
    }

    /// One query image from one class, paired against `size` targets.
    pub fn sample_recognition_batch(&mut self, size: usize) -> Result<Vec<PairSample>> {
        self.ensure_two(self.instances.len(), "instances")?;
        let keys: Vec<String> = self.instances.keys().cloned().collect();
        let qc = keys.choose(&mut self.rng).expect("non-empty").clone();
        let q = *self.instances[&qc].choose(&mut self.rng).expect("non-empty");
        Ok((0..size).map(|_| self.draw_target(q, &qc)).collect())
    }

    fn draw_detection_target(&mut self, query: Instance, qc: &str) -> DetectionSample {
        let matched = self.rng.random_bool(0.5);
        let target_class = if matched {
            qc.to_string()
        } else {
            let keys: Vec<&String> = self.images.keys().collect();
            Self::pick_other_class(&mut self.rng, &keys, qc).clone()
        };
        let entries = &self.images[&target_class];
        let pool: Vec<usize> = if matched && entries.len() > 1 {
            entries.iter().copied().filter(|&e| e != query.entry).collect()
        } else {
            entries.clone()
        };
        let target = *pool.choose(&mut self.rng).expect("class has images");
        let gts = if matched {
            self.manifest.entries[target].boxes.clone()
        } else {
            Vec::new()
        };
        DetectionSample {
            query,
            target,
            query_class: qc.to_string(),
            target_class,
            gts,
        }
    }

    fn draw_detection_query(&mut self) -> Result<(Instance, String)> {
        self.ensure_two(self.images.len(), "images")?;
        if self.boxed.is_empty() {
            return Err(Error::Sampling("no class has a boxed instance".into()));
        }
        let boxed_keys: Vec<String> = self.boxed.keys().cloned().collect();
        let qc = boxed_keys.choose(&mut self.rng).expect("non-empty").clone();
        let query = *self.boxed[&qc].choose(&mut self.rng).expect("non-empty");
        Ok((query, qc))
    }

    pub fn sample_detection_pair(&mut self) -> Result<DetectionSample> {
        let (query, qc) = self.draw_detection_query()?;
        Ok(self.draw_detection_target(query, &qc))
    }

    /// One boxed query paired against `size` target images.
    pub fn sample_detection_batch(&mut self, size: usize) -> Result<Vec<DetectionSample>> {
        let (query, qc) = self.draw_detection_query()?;
        Ok((0..size).map(|_| self.draw_detection_target(query, &qc)).collect())
    }
}
