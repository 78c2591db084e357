//! Plain `key = value` run configuration with dotted section names.
//!
//! Every key has a default; a config file only lists what it changes.
//! Unknown keys are rejected so typos cannot silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bagssl_core::cooc::Tokenizer;
use bagssl_core::dataset_io::AugmentParams;
use bagssl_core::losses::{Objective, VicRegCoeffs};
use bagssl_core::nn::{format_layers, parse_layers, LayerSpec, ModelSpec, Shape};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn channels(self) -> usize {
        match self {
            DatasetKind::Mnist => 1,
            DatasetKind::Cifar10 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchMode {
    Fixed,
    RandomResized { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Spectral,
    VicReg,
    InfoNce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub dataset_dir: PathBuf,
    pub train_limit: usize,
    pub test_limit: usize,

    pub src_size: usize,
    pub canonical: usize,
    pub patch_mode: PatchMode,

    pub augment_enabled: bool,
    pub augment: AugmentParams,

    pub encoder: Vec<LayerSpec>,
    pub projector: Vec<LayerSpec>,

    pub loss: LossKind,
    pub lambda: f64,
    pub temperature: f64,
    pub vicreg: VicRegCoeffs,

    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub calibration_batches: usize,

    pub tokenizer: Tokenizer,
    pub pairs_per_image: usize,
    pub cooc_augment: bool,
    pub cooc_image_limit: usize,

    pub factorize_dim: usize,
    pub factorize_w: f64,
    pub factorize_steps: usize,
    pub factorize_lr: f64,

    pub eval_space: bagssl_core::aggregate_eval::Space,
    pub knn_k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_l2: f64,
    pub eval_train_limit: usize,
    pub eval_test_limit: usize,

    pub figure_images: usize,
    pub figure_trials: usize,
    pub figure_ns: Vec<usize>,
    pub heatmap_stride: usize,
    pub neighbors_k: usize,
    pub neighbor_images: usize,
    pub query_image: usize,
    pub query_x: usize,
    pub query_y: usize,

    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelSpec::desk_default(1, 7);
        Self {
            dataset: DatasetKind::Mnist,
            dataset_dir: PathBuf::from("data/mnist5k"),
            train_limit: 0,
            test_limit: 0,
            src_size: 7,
            canonical: 7,
            patch_mode: PatchMode::Fixed,
            augment_enabled: true,
            augment: AugmentParams::default(),
            encoder: model.encoder,
            projector: model.projector,
            loss: LossKind::InfoNce,
            lambda: 1.0,
            temperature: 0.1,
            vicreg: VicRegCoeffs::default(),
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_epochs: 2,
            epochs: 30,
            batch_size: 128,
            calibration_batches: 8,
            tokenizer: Tokenizer::default(),
            pairs_per_image: 16,
            cooc_augment: true,
            cooc_image_limit: 0,
            factorize_dim: 8,
            factorize_w: 2.0,
            factorize_steps: 5000,
            factorize_lr: 10.0,
            eval_space: bagssl_core::aggregate_eval::Space::Embedding,
            knn_k: 20,
            probe_epochs: 300,
            probe_lr: 0.5,
            probe_l2: 1e-4,
            eval_train_limit: 0,
            eval_test_limit: 0,
            figure_images: 128,
            figure_trials: 8,
            figure_ns: vec![1, 2, 4, 8, 16],
            heatmap_stride: 1,
            neighbors_k: 8,
            neighbor_images: 64,
            query_image: 0,
            query_x: 10,
            query_y: 10,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_range(key: &str, value: &str) -> CliResult<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("{key}: expected lo,hi")))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

fn parse_list(key: &str, value: &str) -> CliResult<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl FromStr for PatchMode {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "fixed" {
            return Ok(PatchMode::Fixed);
        }
        let inner = s
            .strip_prefix("random_resized(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| CliError::Usage(format!("patch.mode: unknown mode {s:?}")))?;
        let (min, max) = parse_range("patch.mode", inner)?;
        Ok(PatchMode::RandomResized { min, max })
    }
}

impl RunConfig {
    /// Input shape of the model this config trains.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            input: Shape::Image {
                channels: self.dataset.channels(),
                height: self.canonical,
                width: self.canonical,
            },
            encoder: self.encoder.clone(),
            projector: self.projector.clone(),
            multi_scale: self.patch_mode != PatchMode::Fixed,
        }
    }

    pub fn objective(&self) -> Objective {
        match self.loss {
            LossKind::Spectral => Objective::Spectral { lambda: self.lambda },
            LossKind::VicReg => Objective::VicReg(self.vicreg),
            LossKind::InfoNce => Objective::InfoNce {
                temperature: self.temperature,
            },
        }
    }

    pub fn augment_params(&self) -> AugmentParams {
        if self.augment_enabled {
            self.augment
        } else {
            AugmentParams::identity()
        }
    }

    fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "dataset.name" => {
                self.dataset = match v.trim() {
                    "mnist" => DatasetKind::Mnist,
                    "cifar10" => DatasetKind::Cifar10,
                    other => return Err(CliError::Usage(format!("dataset.name: unknown dataset {other:?}"))),
                }
            }
            "dataset.dir" => self.dataset_dir = PathBuf::from(v.trim()),
            "dataset.train_limit" => self.train_limit = parse(key, v)?,
            "dataset.test_limit" => self.test_limit = parse(key, v)?,
            "patch.src_size" => self.src_size = parse(key, v)?,
            "patch.canonical" => self.canonical = parse(key, v)?,
            "patch.mode" => self.patch_mode = v.parse()?,
            "augment.enabled" => self.augment_enabled = parse_bool(key, v)?,
            "augment.brightness" => self.augment.brightness_range = parse_range(key, v)?,
            "augment.contrast" => self.augment.contrast_range = parse_range(key, v)?,
            "augment.saturation" => self.augment.saturation_range = parse_range(key, v)?,
            "augment.grayscale_prob" => self.augment.grayscale_prob = parse(key, v)?,
            "augment.flip_prob" => self.augment.flip_prob = parse(key, v)?,
            "model.encoder" => self.encoder = parse_layers(v).map_err(|e| CliError::Usage(format!("{key}: {e}")))?,
            "model.projector" => {
                self.projector = parse_layers(v).map_err(|e| CliError::Usage(format!("{key}: {e}")))?
            }
            "loss.kind" => {
                self.loss = match v.trim() {
                    "spectral" => LossKind::Spectral,
                    "vicreg" => LossKind::VicReg,
                    "infonce" => LossKind::InfoNce,
                    other => return Err(CliError::Usage(format!("loss.kind: unknown loss {other:?}"))),
                }
            }
            "loss.lambda" => self.lambda = parse(key, v)?,
            "loss.temperature" => self.temperature = parse(key, v)?,
            "loss.vicreg_var" => self.vicreg.var = parse(key, v)?,
            "loss.vicreg_inv" => self.vicreg.inv = parse(key, v)?,
            "loss.vicreg_cov" => self.vicreg.cov = parse(key, v)?,
            "optim.lr" => self.lr = parse(key, v)?,
            "optim.momentum" => self.momentum = parse(key, v)?,
            "optim.weight_decay" => self.weight_decay = parse(key, v)?,
            "optim.warmup_epochs" => self.warmup_epochs = parse(key, v)?,
            "optim.epochs" => self.epochs = parse(key, v)?,
            "optim.batch_size" => self.batch_size = parse(key, v)?,
            "optim.calibration_batches" => self.calibration_batches = parse(key, v)?,
            "cooc.tokenizer" => self.tokenizer = v.parse().map_err(|e| CliError::Usage(format!("{key}: {e}")))?,
            "cooc.pairs_per_image" => self.pairs_per_image = parse(key, v)?,
            "cooc.augment" => self.cooc_augment = parse_bool(key, v)?,
            "cooc.image_limit" => self.cooc_image_limit = parse(key, v)?,
            "factorize.dim" => self.factorize_dim = parse(key, v)?,
            "factorize.w" => self.factorize_w = parse(key, v)?,
            "factorize.steps" => self.factorize_steps = parse(key, v)?,
            "factorize.lr" => self.factorize_lr = parse(key, v)?,
            "eval.space" => self.eval_space = v.parse().map_err(|e: String| CliError::Usage(format!("{key}: {e}")))?,
            "eval.knn_k" => self.knn_k = parse(key, v)?,
            "eval.probe_epochs" => self.probe_epochs = parse(key, v)?,
            "eval.probe_lr" => self.probe_lr = parse(key, v)?,
            "eval.probe_l2" => self.probe_l2 = parse(key, v)?,
            "eval.train_limit" => self.eval_train_limit = parse(key, v)?,
            "eval.test_limit" => self.eval_test_limit = parse(key, v)?,
            "figures.images" => self.figure_images = parse(key, v)?,
            "figures.trials" => self.figure_trials = parse(key, v)?,
            "figures.ns" => self.figure_ns = parse_list(key, v)?,
            "figures.heatmap_stride" => self.heatmap_stride = parse(key, v)?,
            "figures.neighbors_k" => self.neighbors_k = parse(key, v)?,
            "figures.neighbor_images" => self.neighbor_images = parse(key, v)?,
            "figures.query_image" => self.query_image = parse(key, v)?,
            "figures.query_x" => self.query_x = parse(key, v)?,
            "figures.query_y" => self.query_y = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v.trim()),
            _ => return Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    pub fn from_text(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Usage(m));
        if self.src_size == 0 || self.canonical == 0 {
            return fail("patch sizes must be positive".into());
        }
        if let PatchMode::RandomResized { min, max } = self.patch_mode {
            if !(min > 0.0 && min <= max && max <= 1.0) {
                return fail(format!("patch.mode: scale interval ({min}, {max}) must lie in (0, 1]"));
            }
        }
        self.augment.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.batch_size < 2 {
            return fail("optim.batch_size must be at least 2".into());
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return fail("optim: need lr >= 0, 0 <= momentum < 1, weight_decay >= 0".into());
        }
        if !(self.lambda >= 0.0) || !(self.temperature > 0.0) {
            return fail("loss: need lambda >= 0 and temperature > 0".into());
        }
        if self.pairs_per_image == 0 {
            return fail("cooc.pairs_per_image must be at least 1".into());
        }
        if self.factorize_dim == 0 || !(self.factorize_w > 0.0) || !(self.factorize_lr > 0.0) {
            return fail("factorize: need dim >= 1, w > 0, lr > 0".into());
        }
        if self.knn_k == 0 {
            return fail("eval.knn_k must be at least 1".into());
        }
        if !(self.probe_lr > 0.0) || !(self.probe_l2 >= 0.0) {
            return fail("eval: need probe_lr > 0 and probe_l2 >= 0".into());
        }
        if self.figure_ns.is_empty() || self.figure_ns.windows(2).any(|w| w[0] > w[1]) || self.figure_ns.contains(&0) {
            return fail("figures.ns must be positive and ascending".into());
        }
        self.model_spec()
            .validate()
            .map_err(|e| CliError::Usage(format!("model: {e}")))?;
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn to_text(&self) -> String {
        let a = &self.augment;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| writeln!(o, "{k} = {v}").unwrap();
        kv(
            "dataset.name",
            match self.dataset {
                DatasetKind::Mnist => "mnist",
                DatasetKind::Cifar10 => "cifar10",
            }
            .into(),
        );
        kv("dataset.dir", self.dataset_dir.display().to_string());
        kv("dataset.train_limit", self.train_limit.to_string());
        kv("dataset.test_limit", self.test_limit.to_string());
        kv("patch.src_size", self.src_size.to_string());
        kv("patch.canonical", self.canonical.to_string());
        kv(
            "patch.mode",
            match self.patch_mode {
                PatchMode::Fixed => "fixed".into(),
                PatchMode::RandomResized { min, max } => format!("random_resized({min},{max})"),
            },
        );
        kv("augment.enabled", self.augment_enabled.to_string());
        kv("augment.brightness", format!("{},{}", a.brightness_range.0, a.brightness_range.1));
        kv("augment.contrast", format!("{},{}", a.contrast_range.0, a.contrast_range.1));
        kv("augment.saturation", format!("{},{}", a.saturation_range.0, a.saturation_range.1));
        kv("augment.grayscale_prob", a.grayscale_prob.to_string());
        kv("augment.flip_prob", a.flip_prob.to_string());
        kv("model.encoder", format_layers(&self.encoder));
        kv("model.projector", format_layers(&self.projector));
        kv(
            "loss.kind",
            match self.loss {
                LossKind::Spectral => "spectral",
                LossKind::VicReg => "vicreg",
                LossKind::InfoNce => "infonce",
            }
            .into(),
        );
        kv("loss.lambda", self.lambda.to_string());
        kv("loss.temperature", self.temperature.to_string());
        kv("loss.vicreg_var", self.vicreg.var.to_string());
        kv("loss.vicreg_inv", self.vicreg.inv.to_string());
        kv("loss.vicreg_cov", self.vicreg.cov.to_string());
        kv("optim.lr", self.lr.to_string());
        kv("optim.momentum", self.momentum.to_string());
        kv("optim.weight_decay", self.weight_decay.to_string());
        kv("optim.warmup_epochs", self.warmup_epochs.to_string());
        kv("optim.epochs", self.epochs.to_string());
        kv("optim.batch_size", self.batch_size.to_string());
        kv("optim.calibration_batches", self.calibration_batches.to_string());
        kv("cooc.tokenizer", self.tokenizer.to_string());
        kv("cooc.pairs_per_image", self.pairs_per_image.to_string());
        kv("cooc.augment", self.cooc_augment.to_string());
        kv("cooc.image_limit", self.cooc_image_limit.to_string());
        kv("factorize.dim", self.factorize_dim.to_string());
        kv("factorize.w", self.factorize_w.to_string());
        kv("factorize.steps", self.factorize_steps.to_string());
        kv("factorize.lr", self.factorize_lr.to_string());
        kv("eval.space", self.eval_space.to_string());
        kv("eval.knn_k", self.knn_k.to_string());
        kv("eval.probe_epochs", self.probe_epochs.to_string());
        kv("eval.probe_lr", self.probe_lr.to_string());
        kv("eval.probe_l2", self.probe_l2.to_string());
        kv("eval.train_limit", self.eval_train_limit.to_string());
        kv("eval.test_limit", self.eval_test_limit.to_string());
        kv("figures.images", self.figure_images.to_string());
        kv("figures.trials", self.figure_trials.to_string());
        kv("figures.ns", join(&self.figure_ns));
        kv("figures.heatmap_stride", self.heatmap_stride.to_string());
        kv("figures.neighbors_k", self.neighbors_k.to_string());
        kv("figures.neighbor_images", self.neighbor_images.to_string());
        kv("figures.query_image", self.query_image.to_string());
        kv("figures.query_x", self.query_x.to_string());
        kv("figures.query_y", self.query_y.to_string());
        kv("seed", self.seed.to_string());
        kv("output.dir", self.output_dir.display().to_string());
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig::from_text("optim.epochs = 3\nloss.kind = vicreg # comment\npatch.mode = random_resized(0.2,1)\n")
            .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.loss, LossKind::VicReg);
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let err = RunConfig::from_text("optim.epoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("optim.epoch"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_text("optim.batch_size = 1").is_err());
        assert!(RunConfig::from_text("augment.flip_prob = 2").is_err());
        assert!(RunConfig::from_text("model.encoder = conv(3,2)").is_err());
    }
}
