//! Labeled 32x32 RGB image sets: folder ingestion, the train/validation
//! split, per-epoch batching, and a synthetic stand-in task.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{purpose, stream};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const IMAGE_SHAPE: [usize; 3] = [IMAGE_SIDE, IMAGE_SIDE, CHANNELS];
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.8;

pub const CACTUS: u8 = 1;
pub const NO_CACTUS: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct Item {
    /// `(32, 32, 3)`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: u8,
    pub path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub split: Split,
}

impl Dataset {
    pub fn new(items: Vec<Item>, split: Split) -> Result<Self> {
        for it in &items {
            if it.image.shape() != IMAGE_SHAPE {
                return Err(Error::Shape(format!(
                    "{}: image shape {:?}, expected {IMAGE_SHAPE:?}",
                    it.path.display(),
                    it.image.shape()
                )));
            }
            if it.label > 1 {
                return Err(Error::Domain(format!(
                    "{}: label {} is not 0 or 1",
                    it.path.display(),
                    it.label
                )));
            }
        }
        Ok(Self { items, split })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(cactus, no_cactus)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|i| i.label == CACTUS).count();
        (pos, self.items.len() - pos)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Stacks the selected items into an `(n, 32, 32, 3)` tensor.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        stack_images(indices.iter().map(|&i| &self.items[i].image))
    }
}

pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.shape() != IMAGE_SHAPE {
            return Err(Error::Shape(format!("cannot stack image of shape {:?}", img.shape())));
        }
        data.extend_from_slice(img.data());
        n += 1;
    }
    Tensor::new(&[n, IMAGE_SIDE, IMAGE_SIDE, CHANNELS], data)
}

/// Subfolder names holding each class under a dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassFolders {
    pub cactus: String,
    pub no_cactus: String,
}

impl Default for ClassFolders {
    fn default() -> Self {
        Self {
            cactus: "cactus".into(),
            no_cactus: "no_cactus".into(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestSummary {
    pub cactus: usize,
    pub no_cactus: usize,
    pub rejected: Vec<(PathBuf, String)>,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "loaded {} images (cactus {}, no_cactus {}), rejected {}",
            self.cactus + self.no_cactus,
            self.cactus,
            self.no_cactus,
            self.rejected.len()
        )
    }
}

/// Decodes one image file into a `(32, 32, 3)` tensor scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> std::result::Result<Tensor<f32>, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let (w, h) = img.dimensions();
    if (w as usize, h as usize) != (IMAGE_SIDE, IMAGE_SIDE) {
        return Err(format!("image is {w}x{h}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"));
    }
    let data = img.into_raw().into_iter().map(|b| f32::from(b) / 255.0).collect();
    Tensor::new(&IMAGE_SHAPE, data).map_err(|e| e.to_string())
}

/// Loads `root/<cactus>/*` (label 1) and `root/<no_cactus>/*` (label 0).
///
/// Items come out sorted by path. Files that fail to decode or are not
/// 32x32 are skipped with a warning and listed in the summary.
pub fn load_dataset(root: &Path, folders: &ClassFolders, split: Split) -> Result<(Dataset, IngestSummary)> {
    let mut files = BTreeMap::new();
    for (name, label) in [(&folders.cactus, CACTUS), (&folders.no_cactus, NO_CACTUS)] {
        let dir = root.join(name);
        let entries = fs::read_dir(&dir).map_err(|e| Error::Ingest {
            path: dir.clone(),
            reason: e.to_string(),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::Ingest {
                path: dir.clone(),
                reason: e.to_string(),
            })?;
            let path = entry.path();
            if path.is_file() {
                files.insert(path, label);
            }
        }
    }

    let mut summary = IngestSummary::default();
    let mut items = Vec::with_capacity(files.len());
    for (path, label) in files {
        match read_image(&path) {
            Ok(image) => {
                if label == CACTUS {
                    summary.cactus += 1;
                } else {
                    summary.no_cactus += 1;
                }
                items.push(Item { image, label, path });
            }
            Err(reason) => {
                warn!("skipping {}: {reason}", path.display());
                summary.rejected.push((path, reason));
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            reason: "no decodable 32x32 images found".into(),
        });
    }
    info!("{}: {summary}", root.display());
    Ok((Dataset::new(items, split)?, summary))
}

/// Writes the set as PNG files under `root/<class folder>/`.
pub fn save_class_folders(dataset: &Dataset, root: &Path, folders: &ClassFolders) -> Result<()> {
    for name in [&folders.cactus, &folders.no_cactus] {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    for (i, item) in dataset.items.iter().enumerate() {
        let folder = if item.label == CACTUS { &folders.cactus } else { &folders.no_cactus };
        let path = root.join(folder).join(format!("{i:06}.png"));
        write_png(&item.image, &path)?;
    }
    Ok(())
}

/// Saves a `(h, w, 3)` tensor with values in `[0, 1]` as an 8-bit PNG.
pub fn write_png(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::Shape(format!("cannot encode image of shape {:?}", image.shape())));
    };
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

/// Number of training items for a split of `n` at `fraction`: `ceil(fraction * n)`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) - 1e-9).ceil() as usize).min(n)
}

/// Seeded shuffle followed by a prefix split into training and validation.
pub fn split_train_val(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Domain(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    if dataset.is_empty() {
        return Err(Error::Domain("cannot split an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut stream(seed, &[purpose::SPLIT]));
    let cut = train_count(dataset.len(), fraction);
    let take = |idx: &[usize], split| Dataset {
        items: idx.iter().map(|&i| dataset.items[i].clone()).collect(),
        split,
    };
    Ok((take(&order[..cut], Split::Train), take(&order[cut..], Split::Val)))
}

/// Permutation of `0..n` for one epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, &[purpose::BATCH_ORDER, epoch]));
    order
}

/// Item indices of each batch for one epoch; the last batch may be short.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    Ok(epoch_permutation(n, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `(b, 32, 32, 3)`.
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub indices: Vec<usize>,
}

pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    batch_order(dataset.len(), batch_size, seed, epoch)?
        .into_iter()
        .map(|indices| {
            Ok(Batch {
                images: dataset.stack(&indices)?,
                labels: indices.iter().map(|&i| dataset.items[i].label).collect(),
                indices,
            })
        })
        .collect()
}

/// Bright-cross-on-noise task: label 1 images carry a bright cross over
/// uniform noise, label 0 images are noise only. Classes alternate.
pub fn synthetic_cross(n: usize, seed: u64, split: Split) -> Dataset {
    let tag = match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    let items = (0..n)
        .map(|i| {
            let mut rng = stream(seed, &[purpose::SYNTHETIC, tag, i as u64]);
            let label = (i % 2) as u8;
            let mut data: Vec<f32> = (0..IMAGE_SIDE * IMAGE_SIDE * CHANNELS)
                .map(|_| rng.random_range(0.0..0.6))
                .collect();
            if label == CACTUS {
                let cy = rng.random_range(13..=18usize);
                let cx = rng.random_range(13..=18usize);
                let arm = rng.random_range(6..=10usize);
                let level: f32 = rng.random_range(0.85..=1.0);
                let mut paint = |y: usize, x: usize| {
                    let o = (y * IMAGE_SIDE + x) * CHANNELS;
                    data[o..o + CHANNELS].fill(level);
                };
                for d in 0..=2 * arm {
                    for t in 0..2 {
                        let along = cx + d - arm;
                        paint(cy + t, along);
                        let along = cy + d - arm;
                        paint(along, cx + t);
                    }
                }
            }
            Item {
                image: Tensor::new(&IMAGE_SHAPE, data).expect("synthetic image shape"),
                label,
                path: PathBuf::from(format!("synthetic/{tag}/{i:06}")),
            }
        })
        .collect();
    Dataset { items, split }
}
