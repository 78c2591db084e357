//! Image representations per protocol and the classifiers that score them.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::str::FromStr;

use bagssl_core::aggregate_eval::{
    bag_aggregate, embed_dataset, knn_eval, linear_probe, local_aggregate, Positions, ProbeConfig, Space,
};
use bagssl_core::dataset_io::{center_crop, ImageRecord};
use bagssl_core::nn::{Mode, Model};
use bagssl_core::seeded_rng;
use ndarray::Array2;
use rand::Rng;

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::error::{CliError, CliResult};

const STREAM_EVAL_TRAIN: u64 = 10;
const STREAM_EVAL_TEST: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// The model applied to the centre crop resized to the patch size.
    Central,
    /// Mean of `n` uniformly placed patches.
    Bag(usize),
    /// Mean of an evenly spaced `n x n` grid of patches.
    Grid(usize),
    /// Grid of `grid x grid` patches pooled with `window`/`stride`, cells
    /// concatenated.
    Local { grid: usize, window: usize, stride: usize },
}

fn call_args<'a>(s: &'a str, name: &str) -> Option<Vec<&'a str>> {
    s.strip_prefix(name)?
        .strip_prefix('(')?
        .strip_suffix(')')
        .map(|inner| inner.split(',').map(str::trim).collect())
}

impl FromStr for Protocol {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        let bad = || CliError::Usage(format!("unknown protocol {s:?}; use central, bag(N), grid(N) or local(G,W,S)"));
        let num = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        if s == "central" {
            return Ok(Protocol::Central);
        }
        if let Some(a) = call_args(s, "bag") {
            return match a.as_slice() {
                [n] => Ok(Protocol::Bag(num(n)?)),
                _ => Err(bad()),
            };
        }
        if let Some(a) = call_args(s, "grid") {
            return match a.as_slice() {
                [n] => Ok(Protocol::Grid(num(n)?)),
                _ => Err(bad()),
            };
        }
        if let Some(a) = call_args(s, "local") {
            return match a.as_slice() {
                [g, w, st] => Ok(Protocol::Local {
                    grid: num(g)?,
                    window: num(w)?,
                    stride: num(st)?,
                }),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Central => write!(f, "central"),
            Protocol::Bag(n) => write!(f, "bag({n})"),
            Protocol::Grid(n) => write!(f, "grid({n})"),
            Protocol::Local { grid, window, stride } => write!(f, "local({grid},{window},{stride})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    Knn(usize),
    Linear,
}

impl FromStr for Classifier {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let s = s.trim();
        if s == "linear" {
            return Ok(Classifier::Linear);
        }
        match call_args(s, "knn").as_deref() {
            Some([k]) => k
                .parse()
                .map(Classifier::Knn)
                .map_err(|_| CliError::Usage(format!("bad k in {s:?}"))),
            _ => Err(CliError::Usage(format!("unknown classifier {s:?}; use knn(K) or linear"))),
        }
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classifier::Knn(k) => write!(f, "knn({k})"),
            Classifier::Linear => write!(f, "linear"),
        }
    }
}

/// One row per image. The note flags protocol/model combinations that are
/// allowed but expected to perform poorly.
pub fn representations(
    model: &Model,
    images: &[ImageRecord],
    cfg: &RunConfig,
    protocol: Protocol,
    space: Space,
    seed: u64,
) -> CliResult<(Array2<f64>, Option<String>)> {
    let rows: Vec<Vec<f64>> = match protocol {
        Protocol::Central => {
            let mut x = Array2::zeros((images.len(), model.input_len()));
            for (mut row, img) in x.rows_mut().into_iter().zip(images) {
                let crop = center_crop(img, cfg.canonical)?;
                row.iter_mut().zip(&crop.pixels).for_each(|(d, s)| *d = *s);
            }
            let (h, z) = model.infer(&x, Mode::Eval)?;
            let m = if space == Space::Embedding { h } else { z };
            m.rows().into_iter().map(|r| r.to_vec()).collect()
        }
        Protocol::Bag(n) | Protocol::Grid(n) => {
            let positions = if matches!(protocol, Protocol::Bag(_)) {
                Positions::Random(n)
            } else {
                Positions::Grid(n)
            };
            embed_dataset(model, images, cfg.src_size, cfg.canonical, positions, space, seed)?
                .iter()
                .map(|recs| bag_aggregate(recs).map(|r| r.vector))
                .collect::<Result<_, _>>()?
        }
        Protocol::Local { grid, window, stride } => {
            embed_dataset(model, images, cfg.src_size, cfg.canonical, Positions::Grid(grid), space, seed)?
                .iter()
                .map(|recs| local_aggregate(recs, window, stride).map(|r| r.vector))
                .collect::<Result<_, _>>()?
        }
    };
    let d = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let m = Array2::from_shape_vec((images.len(), d), flat).expect("rows share a width");
    let note = (protocol == Protocol::Central && !model.spec.multi_scale)
        .then(|| "central crop on a fixed-scale patch model".to_string());
    Ok((m, note))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub protocol: Protocol,
    pub classifier: Classifier,
    pub accuracy: f64,
    pub seed: u64,
    pub note: Option<String>,
}

fn limited(images: Vec<ImageRecord>, n: usize) -> Vec<ImageRecord> {
    if n > 0 && n < images.len() {
        images.into_iter().take(n).collect()
    } else {
        images
    }
}

/// Scores `model` under one protocol and classifier on the configured
/// dataset.
pub fn evaluate(model: &Model, cfg: &RunConfig, protocol: Protocol, classifier: Classifier) -> CliResult<EvalRow> {
    let train = limited(data::load(cfg, Split::Train)?, cfg.eval_train_limit);
    let test = limited(data::load(cfg, Split::Test)?, cfg.eval_test_limit);
    evaluate_on(model, cfg, &train, &test, protocol, classifier)
}

pub fn evaluate_on(
    model: &Model,
    cfg: &RunConfig,
    train: &[ImageRecord],
    test: &[ImageRecord],
    protocol: Protocol,
    classifier: Classifier,
) -> CliResult<EvalRow> {
    if let Classifier::Knn(k) = classifier {
        if k == 0 || k > train.len() {
            return Err(CliError::Usage(format!(
                "knn k = {k} is invalid for a corpus of {} images",
                train.len()
            )));
        }
    }
    let train_seed = seeded_rng(cfg.seed, STREAM_EVAL_TRAIN).random();
    let test_seed = seeded_rng(cfg.seed, STREAM_EVAL_TEST).random();
    let (xtr, note) = representations(model, train, cfg, protocol, cfg.eval_space, train_seed)?;
    let (xte, _) = representations(model, test, cfg, protocol, cfg.eval_space, test_seed)?;
    let ytr = data::labels(train)?;
    let yte = data::labels(test)?;
    let accuracy = match classifier {
        Classifier::Knn(k) => knn_eval(&xtr, &ytr, &xte, &yte, k)?,
        Classifier::Linear => {
            linear_probe(
                &xtr,
                &ytr,
                &xte,
                &yte,
                ProbeConfig {
                    epochs: cfg.probe_epochs,
                    lr: cfg.probe_lr,
                    l2: cfg.probe_l2,
                },
            )?
            .accuracy
        }
    };
    Ok(EvalRow {
        protocol,
        classifier,
        accuracy,
        seed: cfg.seed,
        note,
    })
}

/// Appends a row to `path`, writing the header if the file is new.
pub fn append_row(path: &Path, row: &EvalRow) -> CliResult<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["protocol", "classifier", "accuracy", "seed", "note"])?;
    }
    w.write_record([
        row.protocol.to_string(),
        row.classifier.to_string(),
        format!("{:.6}", row.accuracy),
        row.seed.to_string(),
        row.note.clone().unwrap_or_default(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_round_trip() {
        for s in ["central", "bag(16)", "grid(5)", "local(5,3,2)"] {
            assert_eq!(s.parse::<Protocol>().unwrap().to_string(), s);
        }
        assert!("bag(0)".parse::<Protocol>().is_err());
        assert!("local(5,3)".parse::<Protocol>().is_err());
        assert_eq!("knn(20)".parse::<Classifier>().unwrap(), Classifier::Knn(20));
        assert!("svm".parse::<Classifier>().is_err());
    }
}
