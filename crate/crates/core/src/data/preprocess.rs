use std::collections::HashMap;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::data::manifest::DatasetManifest;
use crate::data::sampler::Instance;
use crate::error::{Error, Result};
use crate::metrics::Rect;
use crate::numerics::Tensor;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

/// Optionally crops to `crop` (pixel box, rounded outwards), stretches to
/// `size x size` bilinearly and returns a `[3, size, size]` tensor in `[0, 1]`.
pub fn preprocess(img: &RgbImage, crop: Option<&Rect>, size: usize) -> Tensor {
    let cropped;
    let view: &RgbImage = match crop {
        Some(r) => {
            let x0 = (r.x.floor().max(0.0) as u32).min(img.width() - 1);
            let y0 = (r.y.floor().max(0.0) as u32).min(img.height() - 1);
            let x1 = ((r.x + r.w).ceil() as u32).clamp(x0 + 1, img.width());
            let y1 = ((r.y + r.h).ceil() as u32).clamp(y0 + 1, img.height());
            cropped = imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image();
            &cropped
        }
        None => img,
    };
    let resized;
    let view = if view.width() as usize == size && view.height() as usize == size {
        view
    } else {
        resized = imageops::resize(view, size as u32, size as u32, FilterType::Triangle);
        &resized
    };
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in view.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, size, size], data).expect("shape matches")
}

/// Decoded images keyed by manifest entry, and preprocessed tensors keyed by
/// instance and size.
#[derive(Default)]
pub struct ImageCache {
    images: HashMap<usize, RgbImage>,
    tensors: HashMap<(Instance, usize), Tensor>,
}

impl ImageCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, manifest: &DatasetManifest, entry: usize) -> Result<&RgbImage> {
        if !self.images.contains_key(&entry) {
            let path = manifest.full_path(&manifest.entries[entry]);
            self.images.insert(entry, load_rgb(&path)?);
        }
        Ok(&self.images[&entry])
    }

    /// Preprocessed tensor for an instance, cropped to its box when it has one.
    pub fn instance(
        &mut self,
        manifest: &DatasetManifest,
        inst: Instance,
        size: usize,
    ) -> Result<Tensor> {
        if let Some(t) = self.tensors.get(&(inst, size)) {
            return Ok(t.clone());
        }
        let crop = inst.region.map(|r| manifest.entries[inst.entry].boxes[r]);
        let img = self.get(manifest, inst.entry)?;
        let t = preprocess(img, crop.as_ref(), size);
        self.tensors.insert((inst, size), t.clone());
        Ok(t)
    }

    /// Preprocessed whole image.
    pub fn image(&mut self, manifest: &DatasetManifest, entry: usize, size: usize) -> Result<Tensor> {
        self.instance(manifest, Instance { entry, region: None }, size)
    }
}
