use std::fmt::Write as _;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{cosine, embed_at, stride_positions, EmbeddingRecord, EvalError, Space};
use crate::dataset_io::{DataError, ImageRecord, Patch};
use crate::nn::Model;

/// Cosine similarity of one query patch to every patch on a stride grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrid {
    pub space: Space,
    pub xs: Vec<usize>,
    pub ys: Vec<usize>,
    /// `ys.len() x xs.len()`.
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPair {
    pub embedding: SimilarityGrid,
    pub projection: SimilarityGrid,
    /// `(row, col)` of the query on the grid.
    pub query_cell: (usize, usize),
}

/// Similarity of `query` to every stride-`stride` patch of `img` in both
/// spaces. The query must sit on the grid; its own cell is compared with
/// itself and reads exactly 1.
pub fn heatmap(
    model: &Model,
    img: &ImageRecord,
    query: &Patch,
    src: usize,
    canonical: usize,
    stride: usize,
) -> Result<HeatmapPair, EvalError> {
    if stride == 0 || src == 0 || src > img.min_side() {
        return Err(DataError::Geometry(format!("stride {stride} / patch side {src}")).into());
    }
    if query.image_id != img.id || query.src_size != src {
        return Err(EvalError::Unsupported(format!(
            "query from image {} at side {} does not belong to image {} at side {src}",
            query.image_id, query.src_size, img.id
        )));
    }
    let xs = stride_positions(img.width, src, stride);
    let ys = stride_positions(img.height, src, stride);
    let (col, row) = match (xs.binary_search(&query.x), ys.binary_search(&query.y)) {
        (Ok(c), Ok(r)) => (c, r),
        _ => {
            return Err(EvalError::Unsupported(format!(
                "query at ({}, {}) is not on the stride-{stride} grid",
                query.x, query.y
            )))
        }
    };
    let coords: Vec<(usize, usize)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    let (h, z) = embed_at(model, img, src, canonical, &coords)?;
    let q = row * xs.len() + col;
    let grid = |m: &Array2<f64>, space| SimilarityGrid {
        space,
        xs: xs.clone(),
        ys: ys.clone(),
        values: Array2::from_shape_fn((ys.len(), xs.len()), |(r, c)| {
            let k = r * xs.len() + c;
            cosine(m.row(q).as_slice().unwrap(), m.row(k).as_slice().unwrap())
        }),
    };
    Ok(HeatmapPair {
        embedding: grid(&h, Space::Embedding),
        projection: grid(&z, Space::Projection),
        query_cell: (row, col),
    })
}

/// 8-bit levels for several grids under one linear map from their joint
/// `[min, max]` to `[0, 255]`. A constant input maps to 255.
pub fn gray_levels(grids: &[&SimilarityGrid]) -> Vec<Vec<u8>> {
    let all = grids.iter().flat_map(|g| g.values.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    grids
        .iter()
        .map(|g| {
            g.values
                .iter()
                .map(|&v| {
                    if hi > lo {
                        (255.0 * (v - lo) / (hi - lo)).round() as u8
                    } else {
                        255
                    }
                })
                .collect()
        })
        .collect()
}

/// Binary 8-bit PGM (`P5`).
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<(), EvalError> {
    assert_eq!(pixels.len(), width * height, "pixel count must match dimensions");
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    fs::write(path, buf)?;
    Ok(())
}

/// Patches side by side with a one-pixel mid-gray gutter: PGM for
/// single-channel patches, PPM (`P6`) for three channels.
pub fn write_tiles(path: impl AsRef<Path>, patches: &[&Patch]) -> Result<(), EvalError> {
    let first = patches.first().ok_or(EvalError::Empty("tile list"))?;
    let (s, ch) = (first.canonical_size, first.channels);
    if ch != 1 && ch != 3 {
        return Err(EvalError::Unsupported(format!("cannot tile {ch}-channel patches")));
    }
    if patches.iter().any(|p| p.canonical_size != s || p.channels != ch) {
        return Err(EvalError::Unsupported("tiles differ in size or channels".into()));
    }
    let width = patches.len() * (s + 1) - 1;
    let mut buf = format!("{}\n{width} {s}\n255\n", if ch == 1 { "P5" } else { "P6" }).into_bytes();
    for y in 0..s {
        for (i, p) in patches.iter().enumerate() {
            if i > 0 {
                buf.extend(std::iter::repeat_n(128u8, ch));
            }
            for x in 0..s {
                for c in 0..ch {
                    buf.push((p.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborTag {
    SameImage,
    SameClassOtherImage,
    OtherClass,
}

impl NeighborTag {
    pub fn as_str(self) -> &'static str {
        match self {
            NeighborTag::SameImage => "same_image",
            NeighborTag::SameClassOtherImage => "same_class_other_image",
            NeighborTag::OtherClass => "other_class",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    /// 1-based.
    pub rank: usize,
    pub image_id: usize,
    pub x: usize,
    pub y: usize,
    pub similarity: f64,
    pub tag: NeighborTag,
}

/// The `k` corpus patches most cosine-similar to `query`. Equal
/// similarities rank the query itself first, then by image, row, column.
pub fn patch_knn_dump(
    query: &EmbeddingRecord,
    corpus: &[EmbeddingRecord],
    label_of: impl Fn(usize) -> Option<u8>,
    k: usize,
) -> Result<Vec<Neighbor>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty("neighbour corpus"));
    }
    if k == 0 || k > corpus.len() {
        return Err(EvalError::InvalidK { k, corpus: corpus.len() });
    }
    for r in corpus {
        if r.space != query.space {
            return Err(EvalError::MixedSpaces);
        }
        if r.vector.len() != query.vector.len() {
            return Err(EvalError::Dimension {
                expected: query.vector.len(),
                found: r.vector.len(),
            });
        }
    }
    let is_self = |r: &EmbeddingRecord| r.image_id == query.image_id && r.x == query.x && r.y == query.y;
    let mut scored: Vec<(f64, &EmbeddingRecord)> =
        corpus.iter().map(|r| (cosine(&query.vector, &r.vector), r)).collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(is_self(b.1).cmp(&is_self(a.1)))
            .then((a.1.image_id, a.1.y, a.1.x).cmp(&(b.1.image_id, b.1.y, b.1.x)))
    });
    let query_label = label_of(query.image_id);
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (similarity, r))| {
            let tag = if r.image_id == query.image_id {
                NeighborTag::SameImage
            } else if query_label.is_some() && label_of(r.image_id) == query_label {
                NeighborTag::SameClassOtherImage
            } else {
                NeighborTag::OtherClass
            };
            Neighbor {
                rank: i + 1,
                image_id: r.image_id,
                x: r.x,
                y: r.y,
                similarity,
                tag,
            }
        })
        .collect())
}

/// Text manifest: a `query` line, a column header, then one line per
/// neighbour.
pub fn write_neighbor_manifest(
    path: impl AsRef<Path>,
    query: &EmbeddingRecord,
    query_label: Option<u8>,
    neighbors: &[Neighbor],
) -> Result<(), EvalError> {
    let mut out = String::new();
    let label = query_label.map_or("none".to_string(), |l| l.to_string());
    writeln!(
        out,
        "query image_id={} x={} y={} label={label} space={}",
        query.image_id, query.x, query.y, query.space
    )
    .unwrap();
    out.push_str("rank,image_id,x,y,similarity,tag\n");
    for n in neighbors {
        writeln!(
            out,
            "{},{},{},{},{:.9},{}",
            n.rank,
            n.image_id,
            n.x,
            n.y,
            n.similarity,
            n.tag.as_str()
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Binary records `image_id u32, x u16, y u16, space u8, d x f32` (little
/// endian) plus a text sidecar with the count, width, space and checkpoint
/// hash.
pub fn write_embedding_dump(
    bin_path: impl AsRef<Path>,
    sidecar_path: impl AsRef<Path>,
    records: &[EmbeddingRecord],
    checkpoint_hash: &str,
) -> Result<(), EvalError> {
    let first = records.first().ok_or(EvalError::Empty("embedding dump"))?;
    let d = first.vector.len();
    let mut buf = Vec::with_capacity(records.len() * (9 + 4 * d));
    for r in records {
        if r.space != first.space {
            return Err(EvalError::MixedSpaces);
        }
        if r.vector.len() != d {
            return Err(EvalError::Dimension {
                expected: d,
                found: r.vector.len(),
            });
        }
        let narrow = |v: usize, max: usize, what: &str| {
            if v > max {
                Err(EvalError::Unsupported(format!("{what} {v} does not fit the dump format")))
            } else {
                Ok(v)
            }
        };
        buf.write_u32::<LittleEndian>(narrow(r.image_id, u32::MAX as usize, "image id")? as u32)?;
        buf.write_u16::<LittleEndian>(narrow(r.x, u16::MAX as usize, "x")? as u16)?;
        buf.write_u16::<LittleEndian>(narrow(r.y, u16::MAX as usize, "y")? as u16)?;
        buf.write_u8(r.space.code())?;
        for &v in &r.vector {
            buf.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    fs::File::create(bin_path)?.write_all(&buf)?;
    let sidecar = format!(
        "count {}\nd_h {d}\nspace {}\ncheckpoint_sha256 {checkpoint_hash}\n",
        records.len(),
        first.space
    );
    fs::write(sidecar_path, sidecar)?;
    Ok(())
}

/// Reads records written by [`write_embedding_dump`] given the vector width.
pub fn read_embedding_dump(bin_path: impl AsRef<Path>, d: usize) -> Result<Vec<EmbeddingRecord>, EvalError> {
    let bytes = fs::read(bin_path)?;
    let stride = 9 + 4 * d;
    if bytes.len() % stride != 0 {
        return Err(EvalError::Unsupported(format!(
            "dump length {} is not a multiple of the record size {stride}",
            bytes.len()
        )));
    }
    let mut r = Cursor::new(bytes.as_slice());
    let mut out = Vec::with_capacity(bytes.len() / stride);
    while (r.position() as usize) < bytes.len() {
        let image_id = r.read_u32::<LittleEndian>()? as usize;
        let x = r.read_u16::<LittleEndian>()? as usize;
        let y = r.read_u16::<LittleEndian>()? as usize;
        let mut code = [0u8];
        r.read_exact(&mut code)?;
        let space = Space::from_code(code[0]).ok_or(EvalError::Unsupported("unknown space code".into()))?;
        let vector = (0..d)
            .map(|_| r.read_f32::<LittleEndian>().map(f64::from))
            .collect::<Result<_, _>>()?;
        out.push(EmbeddingRecord {
            image_id,
            x,
            y,
            space,
            vector,
        });
    }
    Ok(out)
}
