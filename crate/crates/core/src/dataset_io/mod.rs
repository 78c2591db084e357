//! Image datasets, fixed-scale patch extraction and augmentation.
//!
//! Pixels are stored as `f64` in `[0, 1]`, channel-major (`c, y, x`).

mod augment;
mod loaders;
mod patch;

pub use augment::{color_augment, AugmentParams};
pub use loaders::{load_cifar10, load_cifar10_batches, load_idx, CIFAR_RECORD_BYTES};
pub use patch::{
    bilinear_sample_coords, center_crop, extract_patch, random_resized_crop, sample_patch_pair,
    Patch,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("crop ({x}, {y}) size {size} does not fit a {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid scale interval ({min}, {max})")]
    InvalidScale { min: f64, max: f64 },
    #[error("invalid augmentation parameters: {0}")]
    InvalidAugment(String),
}

/// One decoded image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `channels * height * width` values in `[0, 1]`, channel-major.
    pub pixels: Vec<f64>,
    pub label: Option<u8>,
}

impl ImageRecord {
    pub fn new(
        id: usize,
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
        label: Option<u8>,
    ) -> Result<Self, DataError> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(DataError::Geometry(format!(
                "image {id} has empty extent {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(DataError::Geometry(format!(
                "image {id}: {} pixels for extent {channels}x{height}x{width}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Geometry(format!(
                "image {id}: pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            id,
            width,
            height,
            channels,
            pixels,
            label,
        })
    }

    /// A constant-valued image, mostly useful in tests.
    pub fn constant(id: usize, width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            id,
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
            label: None,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn min_side(&self) -> usize {
        self.width.min(self.height)
    }
}
