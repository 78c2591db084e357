use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use super::CoocError;
use crate::dataset_io::Patch;

/// Maps a canonical patch to a discrete token id.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    /// Average-pool to `q x q`, quantize each value to `2^bits` levels and
    /// pack the levels (channel-major) into one integer.
    GridHash { q: usize, bits: u32 },
    /// Nearest centroid (Euclidean, ties to the lowest index). Each row is a
    /// flattened `channels x q x q` pooled patch.
    Codebook { q: usize, centroids: Array2<f64> },
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::GridHash { q: 2, bits: 2 }
    }
}

impl Tokenizer {
    pub fn validate(&self, channels: usize) -> Result<(), CoocError> {
        match self {
            Tokenizer::GridHash { q, bits } => {
                let key_bits = *bits as usize * q * q * channels;
                if *q == 0 || *bits == 0 || key_bits > 64 {
                    return Err(CoocError::InvalidTokenizer(format!(
                        "grid_hash(q={q}, bits={bits}) needs {key_bits} key bits for {channels} channel(s); limit 64"
                    )));
                }
            }
            Tokenizer::Codebook { q, centroids } => {
                if *q == 0 || centroids.nrows() == 0 || centroids.ncols() != q * q * channels {
                    return Err(CoocError::InvalidTokenizer(format!(
                        "codebook of shape {:?} does not match q={q} with {channels} channel(s)",
                        centroids.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    fn q(&self) -> usize {
        match self {
            Tokenizer::GridHash { q, .. } | Tokenizer::Codebook { q, .. } => *q,
        }
    }

    pub fn tokenize(&self, patch: &Patch) -> u64 {
        let pooled = average_pool(patch, self.q());
        match self {
            Tokenizer::GridHash { bits, .. } => {
                let levels = 1u64 << bits;
                pooled.iter().fold(0u64, |key, &v| {
                    let level = ((v * levels as f64).floor().max(0.0) as u64).min(levels - 1);
                    (key << bits) | level
                })
            }
            Tokenizer::Codebook { centroids, .. } => {
                let mut best = (f64::INFINITY, 0usize);
                for (k, c) in centroids.rows().into_iter().enumerate() {
                    let dist: f64 = c.iter().zip(&pooled).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist < best.0 {
                        best = (dist, k);
                    }
                }
                best.1 as u64
            }
        }
    }
}

/// Channel-major `q x q` means over the patch. Cell `i` covers rows
/// `floor(i S / q) .. floor((i + 1) S / q)`.
pub fn average_pool(patch: &Patch, q: usize) -> Vec<f64> {
    let s = patch.canonical_size;
    let edge = |i: usize| i * s / q;
    let mut out = Vec::with_capacity(patch.channels * q * q);
    for c in 0..patch.channels {
        for cy in 0..q {
            for cx in 0..q {
                let (y0, y1) = (edge(cy), edge(cy + 1).max(edge(cy) + 1).min(s));
                let (x0, x1) = (edge(cx), edge(cx + 1).max(edge(cx) + 1).min(s));
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += patch.at(c, y, x);
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tokenizer::GridHash { q, bits } => write!(f, "grid_hash({q},{bits})"),
            Tokenizer::Codebook { q, centroids } => write!(f, "codebook({q},{})", centroids.nrows()),
        }
    }
}

impl FromStr for Tokenizer {
    type Err = CoocError;

    /// Parses `grid_hash(q,bits)`. Codebooks carry data and are built in code.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CoocError::InvalidTokenizer(format!("cannot parse tokenizer {s:?}"));
        let inner = s
            .trim()
            .strip_prefix("grid_hash(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (q, bits) = inner.split_once(',').ok_or_else(bad)?;
        Ok(Tokenizer::GridHash {
            q: q.trim().parse().map_err(|_| bad())?,
            bits: bits.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gray(size: usize, pixels: Vec<f64>) -> Patch {
        Patch {
            image_id: 0,
            x: 0,
            y: 0,
            src_size: size,
            canonical_size: size,
            channels: 1,
            pixels,
        }
    }

    #[test]
    fn one_bit_threshold() {
        let t = Tokenizer::GridHash { q: 1, bits: 1 };
        assert_eq!(t.tokenize(&gray(2, vec![0.4, 0.5, 0.5, 0.5])), 0);
        assert_eq!(t.tokenize(&gray(2, vec![0.5; 4])), 1);
        assert_eq!(t.tokenize(&gray(2, vec![1.0; 4])), 1);
    }

    #[test]
    fn identical_patches_share_token() {
        let t = Tokenizer::default();
        let p: Vec<f64> = (0..49).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        assert_eq!(t.tokenize(&gray(7, p.clone())), t.tokenize(&gray(7, p)));
    }

    #[test]
    fn grid_hash_packs_channel_major() {
        // q = 2 on a 2x2 patch: the pool is the identity. Levels 0, 3, 1, 2.
        let t = Tokenizer::GridHash { q: 2, bits: 2 };
        let key = t.tokenize(&gray(2, vec![0.1, 0.9, 0.3, 0.6]));
        assert_eq!(key, 0b00_11_01_10);
    }

    #[test]
    fn uneven_pool_cells_cover_the_patch() {
        let p = gray(3, (0..9).map(|v| v as f64).collect());
        // Cells: rows {0}, {1,2}; cols {0}, {1,2}.
        assert_eq!(average_pool(&p, 2), vec![0.0, 1.5, 4.5, 6.0]);
    }

    #[test]
    fn codebook_nearest_centroid() {
        let t = Tokenizer::Codebook {
            q: 1,
            centroids: array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        };
        let p = Patch {
            channels: 3,
            pixels: vec![0.2, 0.7, 0.1],
            ..gray(1, vec![])
        };
        // |p - e1|^2 = 0.64 + 0.49 + 0.01 = 1.14; |p - e2|^2 = 0.04 + 0.09 + 0.01 = 0.14.
        assert_eq!(t.tokenize(&p), 1);
        let tie = Patch {
            pixels: vec![0.5, 0.5, 0.0],
            ..p
        };
        assert_eq!(t.tokenize(&tie), 0);
    }

    #[test]
    fn validation_and_parsing() {
        assert!(Tokenizer::GridHash { q: 4, bits: 2 }.validate(3).is_err());
        assert!(Tokenizer::default().validate(1).is_ok());
        let t: Tokenizer = "grid_hash(3, 1)".parse().unwrap();
        assert_eq!(t, Tokenizer::GridHash { q: 3, bits: 1 });
        assert_eq!(t.to_string().parse::<Tokenizer>().unwrap(), t);
        assert!("codebook(2)".parse::<Tokenizer>().is_err());
    }
}
