//! Joint-embedding pretraining on pairs of patches from the same image.

use std::path::{Path, PathBuf};

use bagssl_core::dataset_io::{
    color_augment, extract_patch, random_resized_crop, sample_patch_pair, AugmentParams, ImageRecord, Patch,
};
use bagssl_core::nn::{sgd_step, LrSchedule, Mode, Model, OptimState};
use bagssl_core::{seeded_rng, SeededRng};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{PatchMode, RunConfig};
use crate::error::{CliError, CliResult};

/// RNG streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_CALIBRATION: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct PretrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    pub final_checkpoint: PathBuf,
}

fn stack(patches: &[Patch], width: usize) -> Array2<f64> {
    let mut x = Array2::zeros((patches.len(), width));
    for (mut row, p) in x.rows_mut().into_iter().zip(patches) {
        row.iter_mut().zip(&p.pixels).for_each(|(d, s)| *d = *s);
    }
    x
}

fn sample_view(cfg: &RunConfig, img: &ImageRecord, aug: &AugmentParams, rng: &mut SeededRng) -> CliResult<Patch> {
    let PatchMode::RandomResized { min, max } = cfg.patch_mode else {
        unreachable!("fixed mode samples pairs")
    };
    let crop = random_resized_crop(img, min, max, cfg.canonical, rng)?;
    Ok(color_augment(&crop, aug, rng))
}

fn sample_pair(cfg: &RunConfig, img: &ImageRecord, aug: &AugmentParams, rng: &mut SeededRng) -> CliResult<(Patch, Patch)> {
    match cfg.patch_mode {
        PatchMode::Fixed => Ok(sample_patch_pair(img, cfg.src_size, cfg.canonical, aug, rng)?),
        PatchMode::RandomResized { .. } => Ok((sample_view(cfg, img, aug, rng)?, sample_view(cfg, img, aug, rng)?)),
    }
}

/// Unaugmented patches used to set the stored standardisation statistics,
/// matching what evaluation feeds the model.
fn calibration_set(cfg: &RunConfig, images: &[ImageRecord], width: usize) -> CliResult<Vec<Array2<f64>>> {
    let mut rng = seeded_rng(cfg.seed, STREAM_CALIBRATION);
    let batch = cfg.batch_size.min(images.len());
    (0..cfg.calibration_batches)
        .map(|_| {
            let patches = (0..batch)
                .map(|_| {
                    let img = &images[rng.random_range(0..images.len())];
                    match cfg.patch_mode {
                        PatchMode::Fixed => {
                            let x = rng.random_range(0..=img.width - cfg.src_size);
                            let y = rng.random_range(0..=img.height - cfg.src_size);
                            Ok(extract_patch(img, x, y, cfg.src_size, cfg.canonical)?)
                        }
                        PatchMode::RandomResized { min, max } => {
                            Ok(random_resized_crop(img, min, max, cfg.canonical, &mut rng)?)
                        }
                    }
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(stack(&patches, width))
        })
        .collect()
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:03}.bssl")
}

/// Trains from the configured seed, writing a checkpoint after every epoch,
/// `checkpoint_final.bssl` and `loss_curve.csv` into `out`.
pub fn pretrain(cfg: &RunConfig, images: &[ImageRecord], out: &Path) -> CliResult<PretrainOutcome> {
    if images.len() < 2 {
        return Err(CliError::Data("pretraining needs at least two images".into()));
    }
    if let Some(img) = images.iter().find(|i| i.min_side() < cfg.src_size) {
        return Err(CliError::Usage(format!(
            "patch side {} exceeds image {} ({}x{})",
            cfg.src_size, img.id, img.width, img.height
        )));
    }
    std::fs::create_dir_all(out)?;
    let mut model = Model::new(cfg.model_spec(), &mut seeded_rng(cfg.seed, STREAM_INIT))?;
    let width = model.input_len();
    let objective = cfg.objective();
    let aug = cfg.augment_params();
    let batch = cfg.batch_size.min(images.len());
    let steps_per_epoch = images.len() / batch;
    let schedule = LrSchedule {
        base: cfg.lr,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let mut optim = OptimState::new(schedule, cfg.momentum, cfg.weight_decay, model.params.len());
    let calibration = calibration_set(cfg, images, width)?;
    let mut rng = seeded_rng(cfg.seed, STREAM_DATA);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks_exact(batch) {
            let mut a = Vec::with_capacity(batch);
            let mut b = Vec::with_capacity(batch);
            for &i in chunk {
                let (p, q) = sample_pair(cfg, &images[i], &aug, &mut rng)?;
                a.push(p);
                b.push(q);
            }
            let pass1 = model.forward(&stack(&a, width), Mode::Train)?;
            let pass2 = model.forward(&stack(&b, width), Mode::Train)?;
            let out = objective.evaluate(&pass1.z, &pass2.z)?;
            if !out.value.total.is_finite() {
                return Err(CliError::Numerical(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            model.backward(pass1.tape, &out.grad_z1, None)?;
            model.backward(pass2.tape, &out.grad_z2, None)?;
            lr = sgd_step(&mut model.params, &mut optim, step)?;
            loss_sum += out.value.total;
            step += 1;
        }
        model.calibrate(&calibration)?;
        model
            .to_checkpoint(step as u64, cfg.seed)
            .save(out.join(checkpoint_name(epoch)))?;
        curve.push(EpochRecord {
            epoch,
            loss: loss_sum / steps_per_epoch as f64,
            lr,
        });
    }
    if cfg.epochs == 0 {
        model.calibrate(&calibration)?;
    }
    let final_checkpoint = out.join("checkpoint_final.bssl");
    model.to_checkpoint(step as u64, cfg.seed).save(&final_checkpoint)?;

    let mut w = csv::Writer::from_path(out.join("loss_curve.csv"))?;
    w.write_record(["epoch", "loss", "lr"])?;
    for r in &curve {
        w.write_record([r.epoch.to_string(), format!("{:.12e}", r.loss), format!("{:.12e}", r.lr)])?;
    }
    w.flush()?;
    Ok(PretrainOutcome {
        model,
        curve,
        final_checkpoint,
    })
}
