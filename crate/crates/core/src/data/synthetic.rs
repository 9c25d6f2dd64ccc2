//! Colored geometric glyphs on gray clutter, one class per glyph type and hue.
//!
//! Backgrounds are strictly gray (`r == g == b`) and glyphs are fully
//! saturated, so a glyph's pixels are exactly the non-gray pixels of its image.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::metrics::Rect;

pub const SHAPES: [&str; 10] = [
    "disk", "square", "triangle", "diamond", "plus", "ring", "frame", "hexagon", "xmark",
    "hourglass",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShapeConfig {
    pub classes: usize,
    pub images_per_class: usize,
    pub image_size: u32,
    /// Glyph side length range in pixels.
    pub glyph_min: u32,
    pub glyph_max: u32,
    /// Gray rectangles drawn behind the glyph.
    pub clutter: usize,
}

impl Default for SyntheticShapeConfig {
    fn default() -> Self {
        SyntheticShapeConfig {
            classes: 8,
            images_per_class: 20,
            image_size: 112,
            glyph_min: 20,
            glyph_max: 44,
            clutter: 6,
        }
    }
}

pub fn class_name(k: usize) -> String {
    format!("{}{k:02}", SHAPES[k % SHAPES.len()])
}

/// Fully saturated color for class `k`; hues are spread by the golden ratio.
fn class_hue(k: usize) -> f64 {
    (k as f64 * 0.618_033_988_749_895).fract()
}

fn hsv(h: f64, v: f64) -> Rgb<u8> {
    let h6 = h * 6.0;
    let f = h6.fract();
    let hi = (v * 255.0).round() as u8;
    let up = (v * f * 255.0).round() as u8;
    let down = (v * (1.0 - f) * 255.0).round() as u8;
    let px = match h6 as usize % 6 {
        0 => [hi, up, 0],
        1 => [down, hi, 0],
        2 => [0, hi, up],
        3 => [0, down, hi],
        4 => [up, 0, hi],
        _ => [hi, 0, down],
    };
    Rgb(px)
}

/// Whether normalized coordinates `(u, v)` in `[-1, 1]^2` fall in the shape.
fn inside(shape: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    if au > 1.0 || av > 1.0 {
        return false;
    }
    let r2 = u * u + v * v;
    match shape {
        0 => r2 <= 1.0,
        1 => au <= 0.9 && av <= 0.9,
        2 => au <= (v + 1.0) / 2.0,
        3 => au + av <= 1.0,
        4 => au <= 0.3 || av <= 0.3,
        5 => (0.3..=1.0).contains(&r2),
        6 => au.max(av) >= 0.55,
        7 => av <= 0.866 && 1.732 * au + av <= 1.732,
        8 => (au - av).abs() <= 0.3,
        _ => au <= av + 0.1,
    }
}

/// Renders one image of class `k`. Returns the image and the tight pixel
/// bounding box of the glyph.
pub fn render<R: Rng + ?Sized>(
    cfg: &SyntheticShapeConfig,
    k: usize,
    rng: &mut R,
) -> (RgbImage, Rect) {
    let size = cfg.image_size;
    let base = rng.random_range(50..190u8);
    let mut img = RgbImage::from_fn(size, size, |_, _| {
        let g = base.saturating_add_signed(rng.random_range(-18..=18i8));
        Rgb([g, g, g])
    });
    for _ in 0..cfg.clutter {
        let w = rng.random_range(3..size / 3);
        let h = rng.random_range(3..size / 3);
        let x0 = rng.random_range(0..size - w);
        let y0 = rng.random_range(0..size - h);
        let g = rng.random_range(20..235u8);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.put_pixel(x, y, Rgb([g, g, g]));
            }
        }
    }

    let side = rng.random_range(cfg.glyph_min..=cfg.glyph_max.min(size - 2)) as f64;
    let half = side / 2.0;
    let cx = rng.random_range(half + 1.0..size as f64 - half - 1.0);
    let cy = rng.random_range(half + 1.0..size as f64 - half - 1.0);
    let color = hsv(class_hue(k), rng.random_range(0.75..=1.0));
    let shape = k % SHAPES.len();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    let lo_x = (cx - half).floor().max(0.0) as u32;
    let hi_x = ((cx + half).ceil() as u32).min(size - 1);
    let lo_y = (cy - half).floor().max(0.0) as u32;
    let hi_y = ((cy + half).ceil() as u32).min(size - 1);
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let u = (x as f64 + 0.5 - cx) / half;
            let v = (y as f64 + 0.5 - cy) / half;
            if inside(shape, u, v) {
                img.put_pixel(x, y, color);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let rect = Rect::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
    (img, rect)
}

/// Writes `classes * images_per_class` PNGs under `out_dir/images` plus
/// `out_dir/manifest.txt`, and returns the manifest.
pub fn generate_synthetic<R: Rng + ?Sized>(
    cfg: &SyntheticShapeConfig,
    out_dir: &Path,
    rng: &mut R,
) -> Result<DatasetManifest> {
    if cfg.classes < 4 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 4 classes, got {}",
            cfg.classes
        )));
    }
    if cfg.glyph_min < 4 || cfg.glyph_min > cfg.glyph_max || cfg.glyph_max + 4 > cfg.image_size {
        return Err(Error::Config(format!(
            "glyph range {}..{} does not fit {}px images",
            cfg.glyph_min, cfg.glyph_max, cfg.image_size
        )));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let classes: Vec<String> = (0..cfg.classes).map(class_name).collect();
    let mut entries = Vec::with_capacity(cfg.classes * cfg.images_per_class);
    for (k, name) in classes.iter().enumerate() {
        for i in 0..cfg.images_per_class {
            let (img, rect) = render(cfg, k, rng);
            let rel = Path::new("images").join(format!("{name}_{i:04}.png"));
            img.save(out_dir.join(&rel)).map_err(|source| Error::Image {
                path: out_dir.join(&rel),
                source,
            })?;
            entries.push(ManifestEntry {
                path: rel,
                label: name.clone(),
                boxes: vec![rect],
                width: cfg.image_size,
                height: cfg.image_size,
                line: 0,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        classes,
        entries,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
