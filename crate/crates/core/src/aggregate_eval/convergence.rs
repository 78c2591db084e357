use rand::Rng;
use rayon::prelude::*;

use super::{cosine, embed_at, patch_positions, EvalError, Positions, Space};
use crate::dataset_io::{center_crop, ImageRecord};
use crate::nn::{Mode, Model};

/// What each random bag is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Mean over every stride-1 patch of the image.
    AllPatches,
    /// The model applied to the centre crop; needs a multi-scale model.
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergencePoint {
    /// Bag size; `None` for the full stride-1 grid.
    pub n: Option<usize>,
    /// Per image, the mean cosine over trials.
    pub per_image: Vec<f64>,
    pub median: f64,
    pub mean: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_rows(rows: impl Iterator<Item = usize>, table: &ndarray::Array2<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; table.ncols()];
    let mut n = 0;
    for r in rows {
        acc.iter_mut().zip(table.row(r)).for_each(|(a, v)| *a += v);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Cosine between random `N`-patch bag means and a reference, for each `N`
/// in `ns` followed by the full grid.
///
/// Every image's stride-1 patches are embedded once; a bag of size `N`
/// averages `N` of them drawn uniformly with replacement. Image `i` uses
/// stream `i` of a seed drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_curve<R: Rng + ?Sized>(
    model: &Model,
    images: &[ImageRecord],
    src: usize,
    canonical: usize,
    ns: &[usize],
    reference: Reference,
    trials: usize,
    space: Space,
    rng: &mut R,
) -> Result<Vec<ConvergencePoint>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Empty("image set"));
    }
    if trials == 0 || ns.is_empty() || ns.contains(&0) || ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(EvalError::Unsupported(
            "bag sizes must be positive and ascending, with at least one trial".into(),
        ));
    }
    if reference == Reference::Central && !model.spec.multi_scale {
        return Err(EvalError::Unsupported(
            "the central reference needs a model trained on multi-scale crops".into(),
        ));
    }
    let seed: u64 = rng.random();
    let per_image: Vec<Vec<f64>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| -> Result<Vec<f64>, EvalError> {
            let mut local = crate::seeded_rng(seed, i as u64);
            let coords = patch_positions(img, src, Positions::Stride(1), &mut local)?;
            let (h, z) = embed_at(model, img, src, canonical, &coords)?;
            let table = match space {
                Space::Embedding => h,
                Space::Projection => z,
            };
            let all = mean_rows(0..table.nrows(), &table);
            let target = match reference {
                Reference::AllPatches => all.clone(),
                Reference::Central => {
                    let crop = center_crop(img, canonical)?;
                    let x = ndarray::Array2::from_shape_vec((1, crop.len()), crop.pixels)
                        .map_err(|_| EvalError::Unsupported("crop shape".into()))?;
                    let (h, z) = model.infer(&x, Mode::Eval)?;
                    match space {
                        Space::Embedding => h.row(0).to_vec(),
                        Space::Projection => z.row(0).to_vec(),
                    }
                }
            };
            let mut out = Vec::with_capacity(ns.len() + 1);
            for &n in ns {
                let mut total = 0.0;
                for _ in 0..trials {
                    let picks: Vec<usize> = (0..n).map(|_| local.random_range(0..table.nrows())).collect();
                    total += cosine(&mean_rows(picks.into_iter(), &table), &target);
                }
                out.push(total / trials as f64);
            }
            out.push(cosine(&all, &target));
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let sizes = ns.iter().map(|&n| Some(n)).chain(std::iter::once(None));
    Ok(sizes
        .enumerate()
        .map(|(j, n)| {
            let column: Vec<f64> = per_image.iter().map(|v| v[j]).collect();
            ConvergencePoint {
                n,
                median: median(&column),
                mean: column.iter().sum::<f64>() / column.len() as f64,
                per_image: column,
            }
        })
        .collect())
}
