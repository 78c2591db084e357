use std::path::{Path, PathBuf};

use bagssl_core::dataset_io::{load_cifar10, load_cifar10_batches, load_idx, ImageRecord};

use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn limit(mut images: Vec<ImageRecord>, n: usize) -> Vec<ImageRecord> {
    if n > 0 {
        images.truncate(n);
    }
    images
}

/// The first of `names` present in `dir`, else the first name.
fn first_existing(dir: &Path, names: &[&str]) -> PathBuf {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join(names[0]))
}

/// Loads one split from the standard file names under `dir`.
pub fn load_split(kind: DatasetKind, dir: &Path, split: Split) -> CliResult<Vec<ImageRecord>> {
    let images = match (kind, split) {
        (DatasetKind::Mnist, Split::Train) => load_idx(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )?,
        (DatasetKind::Mnist, Split::Test) => load_idx(
            first_existing(dir, &["t10k-images-idx3-ubyte", "test-images-idx3-ubyte"]),
            first_existing(dir, &["t10k-labels-idx1-ubyte", "test-labels-idx1-ubyte"]),
        )?,
        (DatasetKind::Cifar10, Split::Train) => {
            let files: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            load_cifar10_batches(&files)?
        }
        (DatasetKind::Cifar10, Split::Test) => load_cifar10(dir.join("test_batch.bin"))?,
    };
    if images.is_empty() {
        return Err(CliError::Data(format!("{} contains no images", dir.display())));
    }
    Ok(images)
}

/// The configured split with the dataset-level limit applied.
pub fn load(cfg: &RunConfig, split: Split) -> CliResult<Vec<ImageRecord>> {
    let images = load_split(cfg.dataset, &cfg.dataset_dir, split)?;
    Ok(limit(
        images,
        match split {
            Split::Train => cfg.train_limit,
            Split::Test => cfg.test_limit,
        },
    ))
}

/// Labels of a split; every record must carry one.
pub fn labels(images: &[ImageRecord]) -> CliResult<Vec<u8>> {
    images
        .iter()
        .map(|img| {
            img.label
                .ok_or_else(|| CliError::Data(format!("image {} has no label", img.id)))
        })
        .collect()
}
