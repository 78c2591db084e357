//! Similarity heatmaps, patch neighbours and aggregation convergence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use bagssl_core::aggregate_eval::{
    convergence_curve, embed_dataset, gray_levels, heatmap, patch_knn_dump, write_embedding_dump,
    write_neighbor_manifest, write_pgm, write_tiles, ConvergencePoint, Positions, Reference,
};
use bagssl_core::dataset_io::{extract_patch, ImageRecord};
use bagssl_core::nn::Model;
use bagssl_core::seeded_rng;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const STREAM_NEIGHBORS: u64 = 40;
const STREAM_CONVERGENCE: u64 = 41;

/// Where a patch query lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    /// Index into the loaded test split.
    pub image: usize,
    pub x: usize,
    pub y: usize,
}

impl Query {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            image: cfg.query_image,
            x: cfg.query_x,
            y: cfg.query_y,
        }
    }

    fn stem(&self, kind: &str, img: &ImageRecord) -> String {
        format!("{kind}_img{}_x{}_y{}", img.id, self.x, self.y)
    }
}

fn query_image<'a>(images: &'a [ImageRecord], q: &Query) -> CliResult<&'a ImageRecord> {
    images.get(q.image).ok_or_else(|| {
        CliError::Usage(format!("query image {} is outside the {} loaded images", q.image, images.len()))
    })
}

/// Writes the embedding- and projection-space heatmaps for one query under a
/// shared grey scale and returns their paths.
pub fn run_heatmap(model: &Model, cfg: &RunConfig, images: &[ImageRecord], q: Query, out: &Path) -> CliResult<[PathBuf; 2]> {
    let img = query_image(images, &q)?;
    let patch = extract_patch(img, q.x, q.y, cfg.src_size, cfg.canonical)?;
    let pair = heatmap(model, img, &patch, cfg.src_size, cfg.canonical, cfg.heatmap_stride)?;
    let levels = gray_levels(&[&pair.embedding, &pair.projection]);
    std::fs::create_dir_all(out)?;
    let stem = q.stem("heatmap", img);
    let mut paths = Vec::with_capacity(2);
    for (grid, pixels) in [&pair.embedding, &pair.projection].into_iter().zip(&levels) {
        let path = out.join(format!("{stem}_{}.pgm", grid.space));
        write_pgm(&path, grid.xs.len(), grid.ys.len(), pixels)?;
        paths.push(path);
    }
    Ok(paths.try_into().expect("two spaces"))
}

/// Lowercase hex SHA-256 of a file.
pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Nearest patches to one query over the first `neighbor_images` test images
/// (plus the query's own image). Writes a manifest, a tile strip of the
/// query followed by its neighbours, and the corpus embedding dump.
pub fn run_neighbors(
    model: &Model,
    checkpoint: &Path,
    cfg: &RunConfig,
    images: &[ImageRecord],
    q: Query,
    k: usize,
    out: &Path,
) -> CliResult<PathBuf> {
    if k == 0 {
        return Err(CliError::Usage("neighbors needs k >= 1".into()));
    }
    let img = query_image(images, &q)?;
    let mut corpus_images: Vec<ImageRecord> = images.iter().take(cfg.neighbor_images.max(1)).cloned().collect();
    if q.image >= corpus_images.len() {
        corpus_images.push(img.clone());
    }
    let seed = seeded_rng(cfg.seed, STREAM_NEIGHBORS).random();
    let space = cfg.eval_space;
    let corpus: Vec<_> = embed_dataset(
        model,
        &corpus_images,
        cfg.src_size,
        cfg.canonical,
        Positions::Stride(cfg.heatmap_stride),
        space,
        seed,
    )?
    .into_iter()
    .flatten()
    .collect();
    let query = corpus
        .iter()
        .find(|r| r.image_id == img.id && r.x == q.x && r.y == q.y)
        .cloned()
        .ok_or_else(|| {
            CliError::Usage(format!(
                "query ({}, {}) is not on the stride-{} grid",
                q.x, q.y, cfg.heatmap_stride
            ))
        })?;
    let labels: HashMap<usize, Option<u8>> = corpus_images.iter().map(|i| (i.id, i.label)).collect();
    let neighbors = patch_knn_dump(&query, &corpus, |id| labels.get(&id).copied().flatten(), k)?;

    std::fs::create_dir_all(out)?;
    let stem = format!("{}_{space}", q.stem("neighbors", img));
    let manifest = out.join(format!("{stem}.txt"));
    write_neighbor_manifest(&manifest, &query, img.label, &neighbors)?;

    let by_id: HashMap<usize, &ImageRecord> = corpus_images.iter().map(|i| (i.id, i)).collect();
    let mut tiles = vec![extract_patch(img, q.x, q.y, cfg.src_size, cfg.canonical)?];
    for n in &neighbors {
        tiles.push(extract_patch(by_id[&n.image_id], n.x, n.y, cfg.src_size, cfg.canonical)?);
    }
    let ext = if img.channels == 1 { "pgm" } else { "ppm" };
    write_tiles(out.join(format!("{stem}.{ext}")), &tiles.iter().collect::<Vec<_>>())?;

    write_embedding_dump(
        out.join(format!("{stem}_corpus.bin")),
        out.join(format!("{stem}_corpus.txt")),
        &corpus,
        &file_sha256(checkpoint)?,
    )?;
    Ok(manifest)
}

/// Bag-mean convergence over the first `figure_images` test images, written
/// as one CSV row per bag size and a final `all` row.
pub fn run_convergence(
    model: &Model,
    cfg: &RunConfig,
    images: &[ImageRecord],
    reference: Reference,
    out: &Path,
) -> CliResult<(PathBuf, Vec<ConvergencePoint>)> {
    let n = cfg.figure_images.min(images.len());
    if n == 0 {
        return Err(CliError::Data("no images for the convergence curve".into()));
    }
    let curve = convergence_curve(
        model,
        &images[..n],
        cfg.src_size,
        cfg.canonical,
        &cfg.figure_ns,
        reference,
        cfg.figure_trials,
        cfg.eval_space,
        &mut seeded_rng(cfg.seed, STREAM_CONVERGENCE),
    )?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("convergence_{}.csv", cfg.eval_space));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "median_cosine", "mean_cosine", "images"])?;
    for p in &curve {
        w.write_record([
            p.n.map_or_else(|| "all".to_string(), |n| n.to_string()),
            format!("{:.12e}", p.median),
            format!("{:.12e}", p.mean),
            p.per_image.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok((path, curve))
}

/// Parses `all` / `central` into a [`Reference`].
pub fn parse_reference(s: &str) -> CliResult<Reference> {
    match s {
        "all" => Ok(Reference::AllPatches),
        "central" => Ok(Reference::Central),
        _ => Err(CliError::Usage(format!("unknown reference {s:?}; use all or central"))),
    }
}

