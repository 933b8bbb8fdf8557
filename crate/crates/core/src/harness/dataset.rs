//! Dataset directories: `{id}.png` images with `{id}.masks.json` instance
//! outlines (a JSON array of instances, each an array of `[x, y]` points).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::detector::Image;
use crate::error::{Error, Result};
use crate::geometry::Point;

use super::scene::generate_scene;

pub const MASK_SUFFIX: &str = ".masks.json";

/// One image of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub image: Image,
    pub masks: Vec<Vec<Point>>,
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(image.width() as u32, image.height() as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let v = image.pixels()[i];
        *px = image::Rgb(v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    let pixels = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Image::new(img.height() as usize, img.width() as usize, pixels)
}

pub fn save_masks(masks: &[Vec<Point>], path: &Path) -> Result<()> {
    let text = serde_json::to_string(masks).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_masks(path: &Path) -> Result<Vec<Vec<Point>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Writes `count` scenes to `dir`. Scene `i` uses the `i`-th seed drawn
/// from `seed` and between `min(2, max_objects)` and `max_objects` objects.
pub fn generate_dataset(dir: &Path, seed: u64, count: usize, max_objects: usize, size: usize) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = max_objects.min(2);
    let plan: Vec<(u64, usize)> = (0..count)
        .map(|_| (rng.random::<u64>(), rng.random_range(lo..=max_objects)))
        .collect();
    plan.par_iter()
        .enumerate()
        .map(|(i, &(scene_seed, n))| {
            let id = image_id(i);
            let scene = generate_scene(scene_seed, n, size);
            save_png(&scene.image, &dir.join(format!("{id}.png")))?;
            let masks: Vec<Vec<Point>> = scene.instances.into_iter().map(|s| s.mask).collect();
            save_masks(&masks, &dir.join(format!("{id}{MASK_SUFFIX}")))?;
            Ok(id)
        })
        .collect()
}

/// Image ids of a dataset directory in sorted order.
pub fn list_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("no images found in {}", dir.display())));
    }
    Ok(ids)
}

/// Loads every image and its masks, in id order.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetItem>> {
    list_ids(dir)?
        .into_par_iter()
        .map(|id| {
            let image = load_png(&dir.join(format!("{id}.png")))?;
            let masks = load_masks(&dir.join(format!("{id}{MASK_SUFFIX}")))?;
            Ok(DatasetItem { id, image, masks })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = generate_dataset(dir.path(), 5, 3, 3, 32).unwrap();
        assert_eq!(ids, vec!["img_00000", "img_00001", "img_00002"]);
        let items = load_dataset(dir.path()).unwrap();
        assert_eq!(items.len(), 3);
        for item in &items {
            assert_eq!(item.image.height(), 32);
            assert!(!item.masks.is_empty());
        }
        let again = tempfile::tempdir().unwrap();
        generate_dataset(again.path(), 5, 3, 3, 32).unwrap();
        assert_eq!(load_dataset(again.path()).unwrap(), items);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(list_ids(dir.path()), Err(Error::Data(_))));
    }
}
