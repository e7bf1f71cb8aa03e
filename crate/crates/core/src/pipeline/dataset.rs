//! Image directory ingestion, split, and cropping.

use std::path::{Path, PathBuf};

use ds2c2_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{self, Image8};
use crate::seeds;
use crate::nn::CodecArch;

const IMAGE_EXTENSIONS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];
const LABEL_SUFFIX: &str = "_label";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub image: PathBuf,
    pub label: Option<PathBuf>,
}

/// One normalized crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3,H,W]` in [-1,1].
    pub image: Tensor<f32>,
    /// `[1,H,W]` label map rescaled to [-1,1].
    pub label: Option<Tensor<f32>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetOptions {
    pub crop: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub train_crops_per_image: usize,
    /// Tile each test image with non-overlapping centred crops instead of one centre crop.
    pub test_grid: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { crop: 32, seed: 0, test_fraction: 0.25, train_crops_per_image: 1, test_grid: false }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train_entries: Vec<Entry>,
    pub test_entries: Vec<Entry>,
    pub crop: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Files that failed to decode or were smaller than the crop.
    pub skipped: usize,
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

/// Image files in `dir`, with `<stem>_label.pgm` matched as label maps.
pub fn list_entries(dir: &Path) -> Result<Vec<Entry>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image(p)).collect();
    files.sort();
    let entries = files
        .iter()
        .filter(|p| !stem(p).ends_with(LABEL_SUFFIX))
        .map(|p| {
            let label = dir.join(format!("{}{}.pgm", stem(p), LABEL_SUFFIX));
            Entry { image: p.clone(), label: label.exists().then_some(label) }
        })
        .collect();
    Ok(entries)
}

/// Labels are stored as raw class indices; map 0..=255 onto [-1,1].
fn label_tensor(img: &Image8) -> Tensor<f32> {
    let g = Image8 { channels: 1, height: img.height, width: img.width, data: img.plane(0) };
    imaging::normalize(&g)
}

struct Loaded {
    id: String,
    image: Image8,
    label: Option<Image8>,
}

fn load_entry(e: &Entry, crop: usize) -> Option<Loaded> {
    let image = match imaging::read_image(&e.image) {
        Ok(img) => imaging::to_rgb(&img),
        Err(err) => {
            log::warn!("skipping {}: {}", e.image.display(), err);
            return None;
        }
    };
    if image.height < crop || image.width < crop {
        log::warn!("skipping {}: {}x{} is smaller than crop {}", e.image.display(), image.height, image.width, crop);
        return None;
    }
    let label = match &e.label {
        Some(p) => match imaging::read_image(p) {
            Ok(l) if (l.height, l.width) == (image.height, image.width) => Some(l),
            Ok(_) => {
                log::warn!("skipping {}: label size differs from image", e.image.display());
                return None;
            }
            Err(err) => {
                log::warn!("skipping {}: {}", p.display(), err);
                return None;
            }
        },
        None => None,
    };
    Some(Loaded { id: stem(&e.image), image, label })
}

fn make_sample(l: &Loaded, top: usize, left: usize, crop: usize) -> Result<Sample> {
    let img = imaging::crop(&l.image, top, left, crop, crop)?;
    let label = match &l.label {
        Some(lab) => Some(label_tensor(&imaging::crop(lab, top, left, crop, crop)?)),
        None => None,
    };
    Ok(Sample { id: format!("{}@{}_{}", l.id, top, left), image: imaging::normalize(&img), label })
}

pub fn load_dataset(dir: &Path, opts: &DatasetOptions) -> Result<Dataset> {
    if opts.crop == 0 || opts.crop % CodecArch::DOWNSAMPLE != 0 {
        return Err(Error::Config(format!("crop {} must be a positive multiple of {}", opts.crop, CodecArch::DOWNSAMPLE)));
    }
    let mut entries = list_entries(dir)?;
    entries.shuffle(&mut seeds::rng(seeds::derive_seed(opts.seed, "split")));
    let mut skipped = 0;
    let mut loaded = Vec::new();
    let mut kept = Vec::new();
    for e in &entries {
        match load_entry(e, opts.crop) {
            Some(l) => {
                loaded.push(l);
                kept.push(e.clone());
            }
            None => skipped += 1,
        }
    }
    if loaded.is_empty() {
        return Err(Error::Dataset(format!("no usable images in {}", dir.display())));
    }
    let n = loaded.len();
    let n_test = if n < 2 { 0 } else { ((n as f64 * opts.test_fraction).round() as usize).clamp(1, n - 1) };
    let (test_l, train_l) = loaded.split_at(n_test);
    let crop = opts.crop;
    let mut train = Vec::new();
    for (k, l) in train_l.iter().enumerate() {
        let mut rng = seeds::rng(seeds::derive_indexed(opts.seed, "crop", &[k as u64]));
        for _ in 0..opts.train_crops_per_image {
            let top = rng.gen_range(0..=l.image.height - crop);
            let left = rng.gen_range(0..=l.image.width - crop);
            train.push(make_sample(l, top, left, crop)?);
        }
    }
    let mut test = Vec::new();
    for l in test_l {
        let (rows, cols) = if opts.test_grid { (l.image.height / crop, l.image.width / crop) } else { (1, 1) };
        let top0 = (l.image.height - rows * crop) / 2;
        let left0 = (l.image.width - cols * crop) / 2;
        for r in 0..rows {
            for c in 0..cols {
                test.push(make_sample(l, top0 + r * crop, left0 + c * crop, crop)?);
            }
        }
    }
    Ok(Dataset {
        test_entries: kept[..n_test].to_vec(),
        train_entries: kept[n_test..].to_vec(),
        crop,
        train,
        test,
        skipped,
    })
}

/// Stack samples into `[N,3,H,W]` (and labels into `[N,1,H,W]` when all have one).
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let images: Vec<Tensor<f32>> = samples.iter().map(|s| s.image.clone()).collect();
    let x = Tensor::stack(&images)?;
    let labels: Option<Vec<Tensor<f32>>> = samples.iter().map(|s| s.label.clone()).collect();
    let s = match labels {
        Some(l) if !l.is_empty() => Some(Tensor::stack(&l)?),
        _ => None,
    };
    Ok((x, s))
}
