//! Training and held-out image sets.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::imageops::FilterType;
use ralgen_core::data::SyntheticDatasetSpec;
use ralgen_core::image::{from_rgb8, Image};

use crate::config::{DataSource, ExperimentConfig};

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Image>,
    pub holdout: Vec<Image>,
}

pub fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    let size = cfg.codec.image_size;
    let (n_train, n_hold) = (cfg.data.train_count, cfg.data.holdout_count);
    match cfg.data.source {
        DataSource::Synthetic => {
            let spec = SyntheticDatasetSpec { generator: cfg.data.generator, image_size: size, count: n_train + n_hold, seed: cfg.data.seed };
            if cfg.codec.channels != 3 {
                bail!("synthetic datasets are RGB; set data.channels = 3");
            }
            Ok(Dataset { train: spec.generate_range(0, n_train), holdout: spec.generate_range(n_train, n_train + n_hold) })
        }
        DataSource::Folder => {
            let mut images = read_folder(Path::new(&cfg.data.path), size)?;
            if cfg.codec.channels != 3 {
                bail!("folder ingestion produces RGB images; set data.channels = 3");
            }
            if images.len() <= n_hold {
                bail!("{} holds {} images, need more than data.holdout_count = {n_hold}", cfg.data.path, images.len());
            }
            let holdout = images.split_off(images.len() - n_hold);
            images.truncate(n_train);
            Ok(Dataset { train: images, holdout })
        }
    }
}

/// PPM and PNG files of `dir` in name order, center-cropped to a square
/// and resized to `size`.
pub fn read_folder(dir: &Path, size: usize) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            matches!(ext.as_deref(), Some("ppm" | "png"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let img = image::open(p).with_context(|| format!("decoding {}", p.display()))?.to_rgb8();
            let side = img.width().min(img.height());
            let (x, y) = ((img.width() - side) / 2, (img.height() - side) / 2);
            let square = image::imageops::crop_imm(&img, x, y, side, side).to_image();
            let small = image::imageops::resize(&square, size as u32, size as u32, FilterType::Triangle);
            Ok(from_rgb8(size, size, small.as_raw()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folder_ingestion_crops_and_resizes() {
        let dir = tempfile::tempdir().unwrap();
        let mut wide = image::RgbImage::new(12, 8);
        for (x, _, px) in wide.enumerate_pixels_mut() {
            *px = if x < 2 || x >= 10 { image::Rgb([255, 0, 0]) } else { image::Rgb([0, 0, 255]) };
        }
        wide.save(dir.path().join("b.png")).unwrap();
        image::RgbImage::from_pixel(4, 4, image::Rgb([255, 255, 255])).save(dir.path().join("a.ppm")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "skip").unwrap();
        let imgs = read_folder(dir.path(), 4).unwrap();
        assert_eq!(imgs.len(), 2);
        assert!(imgs[0].data().iter().all(|&v| v == 1.0));
        // the red side bands are cropped away
        assert!((0..4).all(|y| (0..4).all(|x| imgs[1].get(0, y, x) == -1.0 && imgs[1].get(2, y, x) == 1.0)));
    }

    #[test]
    fn synthetic_split_is_disjoint_and_reproducible() {
        let cfg = ExperimentConfig::parse("data.train_count = 5\ndata.holdout_count = 3").unwrap();
        let a = load(&cfg).unwrap();
        assert_eq!((a.train.len(), a.holdout.len()), (5, 3));
        assert_eq!(load(&cfg).unwrap().holdout, a.holdout);
        assert!(a.train.iter().all(|t| !a.holdout.contains(t)));
    }
}
