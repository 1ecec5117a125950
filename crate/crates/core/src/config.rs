//! Run configuration as a flat `key = value` text file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentSpec;
use crate::data::{ClassFolders, DEFAULT_BATCH_SIZE, DEFAULT_SPLIT_FRACTION};
use crate::error::{Error, Result};
use crate::init::{InitScheme, SlopeInterval};
use crate::model::{TrainConfig, DEFAULT_ANCHOR_IMAGES};
use crate::optim::AdamConfig;

pub const SEED_ENV: &str = "ERICNN_SEED";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.effective";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub alpha_min: f64,
    pub init: InitScheme,
    /// Training images whose patches anchor the initial biases; 0 leaves
    /// biases at zero.
    pub align_images: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub split_fraction: f64,
    pub augment: AugmentSpec,
    pub folders: ClassFolders,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data/train"),
            out_dir: PathBuf::from("runs/latest"),
            seed: 0,
            alpha_min: 30.0,
            init: InitScheme::Eri,
            align_images: DEFAULT_ANCHOR_IMAGES,
            epochs: 100,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: AdamConfig::default().lr,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            augment: AugmentSpec::default(),
            folders: ClassFolders::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (lo, hi) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected `low,high`, got `{value}`")))?;
    Ok((parse(key, lo.trim())?, parse(key, hi.trim())?))
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.augment;
        match key {
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "alpha_min" => self.alpha_min = parse(key, value)?,
            "init" => self.init = value.parse()?,
            "align_images" => self.align_images = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "split_fraction" => self.split_fraction = parse(key, value)?,
            "cactus_folder" => self.folders.cactus = value.to_string(),
            "no_cactus_folder" => self.folders.no_cactus = value.to_string(),
            "augment" => {
                let on = parse_bool(key, value)?;
                a.scaling = on;
                a.horizontal_flip = on;
                a.rotation = on;
                a.zoom = on;
                a.intensity_shift = on;
                a.lighting = on;
            }
            "augment.scaling" => a.scaling = parse_bool(key, value)?,
            "augment.horizontal_flip" => a.horizontal_flip = parse_bool(key, value)?,
            "augment.rotation" => a.rotation = parse_bool(key, value)?,
            "augment.zoom" => a.zoom = parse_bool(key, value)?,
            "augment.intensity_shift" => a.intensity_shift = parse_bool(key, value)?,
            "augment.lighting" => a.lighting = parse_bool(key, value)?,
            "augment.rotation_max" => a.rotation_max = parse(key, value)?,
            "augment.zoom_range" => a.zoom_range = parse_range(key, value)?,
            "augment.scale_range" => a.scale_range = parse_range(key, value)?,
            "augment.intensity_shift_range" => a.intensity_shift_range = parse_range(key, value)?,
            "augment.lighting_gamma_range" => a.lighting_gamma_range = parse_range(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the seed from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(SEED_ENV) {
            Ok(v) => self.set("seed", v.trim()).map_err(|e| Error::Config(format!("{SEED_ENV}: {e}"))),
            Err(_) => Ok(()),
        }
    }

    /// Checks every value without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        SlopeInterval::new(self.alpha_min).map_err(|e| Error::Config(e.to_string()))?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        self.augment.validate()
    }

    pub fn interval(&self) -> Result<SlopeInterval> {
        SlopeInterval::new(self.alpha_min).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            augment: AugmentSpec {
                seed: self.seed,
                ..self.augment.clone()
            },
            seed: self.seed,
        }
    }

    /// Every setting, one `key = value` per line, in a form
    /// [`RunConfig::apply_text`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let range = |(lo, hi): (f64, f64)| format!("{lo},{hi}");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data_root", self.data_root.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("alpha_min", self.alpha_min.to_string());
        kv("init", self.init.to_string());
        kv("align_images", self.align_images.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("lr", self.lr.to_string());
        kv("split_fraction", self.split_fraction.to_string());
        kv("cactus_folder", self.folders.cactus.clone());
        kv("no_cactus_folder", self.folders.no_cactus.clone());
        kv("augment.scaling", a.scaling.to_string());
        kv("augment.horizontal_flip", a.horizontal_flip.to_string());
        kv("augment.rotation", a.rotation.to_string());
        kv("augment.zoom", a.zoom.to_string());
        kv("augment.intensity_shift", a.intensity_shift.to_string());
        kv("augment.lighting", a.lighting.to_string());
        kv("augment.rotation_max", a.rotation_max.to_string());
        kv("augment.zoom_range", range(a.zoom_range));
        kv("augment.scale_range", range(a.scale_range));
        kv("augment.intensity_shift_range", range(a.intensity_shift_range));
        kv("augment.lighting_gamma_range", range(a.lighting_gamma_range));
        s
    }
}
