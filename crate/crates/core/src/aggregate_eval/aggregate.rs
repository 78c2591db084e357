use super::{EmbeddingRecord, EvalError, ImageRepresentation, Method};

fn check_uniform(records: &[EmbeddingRecord]) -> Result<usize, EvalError> {
    let first = records.first().ok_or(EvalError::Empty("record set"))?;
    let d = first.vector.len();
    for r in records {
        if r.image_id != first.image_id {
            return Err(EvalError::MixedImages(first.image_id, r.image_id));
        }
        if r.space != first.space {
            return Err(EvalError::MixedSpaces);
        }
        if r.vector.len() != d {
            return Err(EvalError::Dimension {
                expected: d,
                found: r.vector.len(),
            });
        }
    }
    Ok(d)
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    let mut n = 0usize;
    for v in vectors {
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    sum
}

/// Componentwise mean of the records, summed in the given order.
pub fn bag_aggregate(records: &[EmbeddingRecord]) -> Result<ImageRepresentation, EvalError> {
    let d = check_uniform(records)?;
    Ok(ImageRepresentation {
        image_id: records[0].image_id,
        vector: mean_of(records.iter().map(|r| r.vector.as_slice()), d),
        method: Method::BagMean(records.len()),
    })
}

/// Average-pools a complete grid of patch vectors with a square `window`
/// and `stride`, then concatenates the pooled cells row-major.
pub fn local_aggregate(
    records: &[EmbeddingRecord],
    window: usize,
    stride: usize,
) -> Result<ImageRepresentation, EvalError> {
    let d = check_uniform(records)?;
    let mut xs: Vec<usize> = records.iter().map(|r| r.x).collect();
    let mut ys: Vec<usize> = records.iter().map(|r| r.y).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let (cols, rows) = (xs.len(), ys.len());
    let mut grid: Vec<Option<&[f64]>> = vec![None; rows * cols];
    for r in records {
        let cx = xs.binary_search(&r.x).expect("collected above");
        let cy = ys.binary_search(&r.y).expect("collected above");
        let cell = &mut grid[cy * cols + cx];
        if cell.is_some() {
            return Err(EvalError::IncompleteGrid(format!(
                "position ({}, {}) appears twice",
                r.x, r.y
            )));
        }
        *cell = Some(&r.vector);
    }
    if let Some(missing) = grid.iter().position(Option::is_none) {
        return Err(EvalError::IncompleteGrid(format!(
            "{} of {} cells filled; first gap at ({}, {})",
            records.len(),
            rows * cols,
            xs[missing % cols],
            ys[missing / cols]
        )));
    }
    if window == 0 || stride == 0 || window > rows || window > cols {
        return Err(EvalError::IncompleteGrid(format!(
            "window {window} / stride {stride} do not fit a {rows}x{cols} grid"
        )));
    }
    let cells_y = (rows - window) / stride + 1;
    let cells_x = (cols - window) / stride + 1;
    let mut vector = Vec::with_capacity(cells_y * cells_x * d);
    for py in 0..cells_y {
        for px in 0..cells_x {
            let members = (py * stride..py * stride + window).flat_map(|gy| {
                let grid = &grid;
                (px * stride..px * stride + window).map(move |gx| grid[gy * cols + gx].unwrap())
            });
            vector.extend(mean_of(members, d));
        }
    }
    Ok(ImageRepresentation {
        image_id: records[0].image_id,
        vector,
        method: Method::LocalConcat {
            rows,
            cols,
            window,
            stride,
        },
    })
}
