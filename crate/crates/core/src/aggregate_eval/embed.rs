use ndarray::Array2;
use rand::Rng;

use super::{EmbeddingRecord, EvalError, Space};
use crate::dataset_io::{extract_patch, DataError, ImageRecord};
use crate::nn::{Mode, Model};

/// Rows pushed through the model at once.
const EMBED_BATCH: usize = 1024;

/// How patch top-left corners are chosen on an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positions {
    /// `n` corners drawn independently and uniformly (with replacement).
    Random(usize),
    /// Every `s`-th corner along each axis, plus the last aligned corner.
    Stride(usize),
    /// `n x n` corners spread evenly from edge to edge.
    Grid(usize),
}

/// `0, s, 2s, ...` up to `extent - src`, with `extent - src` appended if the
/// stride does not land on it.
pub fn stride_positions(extent: usize, src: usize, stride: usize) -> Vec<usize> {
    let last = extent - src;
    let mut out: Vec<usize> = (0..=last).step_by(stride.max(1)).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// `n` corners `round(i (extent - src) / (n - 1))`; a single corner is centred.
pub fn grid_positions(extent: usize, src: usize, n: usize) -> Vec<usize> {
    let span = (extent - src) as f64;
    if n == 1 {
        return vec![(span / 2.0).floor() as usize];
    }
    (0..n)
        .map(|i| (i as f64 * span / (n - 1) as f64).round() as usize)
        .collect()
}

/// Corner coordinates `(x, y)`; lattice modes are row-major.
pub fn patch_positions<R: Rng + ?Sized>(
    img: &ImageRecord,
    src: usize,
    positions: Positions,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, EvalError> {
    if src == 0 || src > img.min_side() {
        return Err(DataError::Geometry(format!(
            "patch side {src} does not fit a {}x{} image",
            img.width, img.height
        ))
        .into());
    }
    let lattice = |xs: Vec<usize>, ys: Vec<usize>| {
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .collect::<Vec<_>>()
    };
    Ok(match positions {
        Positions::Random(0) | Positions::Grid(0) | Positions::Stride(0) => {
            return Err(DataError::Geometry("position count and stride must be positive".into()).into())
        }
        Positions::Random(n) => (0..n)
            .map(|_| {
                let x = rng.random_range(0..=img.width - src);
                let y = rng.random_range(0..=img.height - src);
                (x, y)
            })
            .collect(),
        Positions::Stride(s) => lattice(
            stride_positions(img.width, src, s),
            stride_positions(img.height, src, s),
        ),
        Positions::Grid(n) => lattice(
            grid_positions(img.width, src, n),
            grid_positions(img.height, src, n),
        ),
    })
}

/// Embeds the patches at `coords` (eval mode, no augmentation) and returns
/// `(h, z)` with one row per coordinate.
pub fn embed_at(
    model: &Model,
    img: &ImageRecord,
    src: usize,
    canonical: usize,
    coords: &[(usize, usize)],
) -> Result<(Array2<f64>, Array2<f64>), EvalError> {
    let jobs: Vec<(&ImageRecord, usize, usize)> = coords.iter().map(|&(x, y)| (img, x, y)).collect();
    embed_jobs(model, &jobs, src, canonical)
}

fn embed_jobs(
    model: &Model,
    jobs: &[(&ImageRecord, usize, usize)],
    src: usize,
    canonical: usize,
) -> Result<(Array2<f64>, Array2<f64>), EvalError> {
    let width = model.input_len();
    let mut h = Array2::zeros((jobs.len(), model.embed_dim()));
    let mut z = Array2::zeros((jobs.len(), model.proj_dim()));
    for (c, chunk) in jobs.chunks(EMBED_BATCH).enumerate() {
        let mut x = Array2::zeros((chunk.len(), width));
        for (row, &(img, px, py)) in chunk.iter().enumerate() {
            let patch = extract_patch(img, px, py, src, canonical)?;
            if patch.len() != width {
                return Err(EvalError::Dimension {
                    expected: width,
                    found: patch.len(),
                });
            }
            x.row_mut(row)
                .iter_mut()
                .zip(&patch.pixels)
                .for_each(|(d, s)| *d = *s);
        }
        let (hc, zc) = model.infer(&x, Mode::Eval)?;
        let start = c * EMBED_BATCH;
        h.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&hc);
        z.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&zc);
    }
    Ok((h, z))
}

fn to_records(
    jobs: &[(&ImageRecord, usize, usize)],
    h: Array2<f64>,
    z: Array2<f64>,
    space: Space,
) -> Result<Vec<EmbeddingRecord>, EvalError> {
    let m = match space {
        Space::Embedding => h,
        Space::Projection => z,
    };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite("patch embeddings"));
    }
    Ok(jobs
        .iter()
        .zip(m.rows())
        .map(|(&(img, x, y), row)| EmbeddingRecord {
            image_id: img.id,
            x,
            y,
            space,
            vector: row.to_vec(),
        })
        .collect())
}

/// One record per patch position on a single image.
pub fn embed_patches<R: Rng + ?Sized>(
    model: &Model,
    img: &ImageRecord,
    src: usize,
    canonical: usize,
    positions: Positions,
    space: Space,
    rng: &mut R,
) -> Result<Vec<EmbeddingRecord>, EvalError> {
    let coords = patch_positions(img, src, positions, rng)?;
    let jobs: Vec<_> = coords.iter().map(|&(x, y)| (img, x, y)).collect();
    let (h, z) = embed_jobs(model, &jobs, src, canonical)?;
    to_records(&jobs, h, z, space)
}

/// [`embed_patches`] over a dataset. Image `n` draws random positions from
/// stream `n` of `seed`; patches from all images share model batches.
pub fn embed_dataset(
    model: &Model,
    images: &[ImageRecord],
    src: usize,
    canonical: usize,
    positions: Positions,
    space: Space,
    seed: u64,
) -> Result<Vec<Vec<EmbeddingRecord>>, EvalError> {
    let mut jobs = Vec::new();
    let mut counts = Vec::with_capacity(images.len());
    for (n, img) in images.iter().enumerate() {
        let mut rng = crate::seeded_rng(seed, n as u64);
        let coords = patch_positions(img, src, positions, &mut rng)?;
        counts.push(coords.len());
        jobs.extend(coords.into_iter().map(|(x, y)| (img, x, y)));
    }
    let (h, z) = embed_jobs(model, &jobs, src, canonical)?;
    let mut all = to_records(&jobs, h, z, space)?.into_iter();
    Ok(counts
        .into_iter()
        .map(|c| all.by_ref().take(c).collect())
        .collect())
}
