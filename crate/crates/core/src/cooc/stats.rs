use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use super::{CoocError, Tokenizer};
use crate::dataset_io::{sample_patch_pair, AugmentParams, ImageRecord};
use crate::losses::DiscreteCooc;

/// Empirical within-image token co-occurrence counts.
///
/// Every sampled pair `(a, b)` is recorded as both `(a, b)` and `(b, a)`, so
/// `pair_counts` is symmetric and `total_pairs` is twice the number of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocStats {
    /// Token id to dense index, in increasing token order.
    pub vocab: BTreeMap<u64, usize>,
    pub pair_counts: BTreeMap<(usize, usize), u64>,
    pub marginal_counts: Vec<u64>,
    pub total_pairs: u64,
    pub alpha: f64,
}

impl CoocStats {
    /// Builds stats from raw token pairs; each pair is counted in both orders.
    pub fn from_token_pairs(pairs: &[(u64, u64)]) -> Self {
        let mut vocab: BTreeMap<u64, usize> = pairs.iter().flat_map(|&(a, b)| [(a, 0), (b, 0)]).collect();
        for (i, idx) in vocab.values_mut().enumerate() {
            *idx = i;
        }
        let mut pair_counts = BTreeMap::new();
        let mut marginal_counts = vec![0u64; vocab.len()];
        for &(a, b) in pairs {
            let (i, j) = (vocab[&a], vocab[&b]);
            *pair_counts.entry((i, j)).or_insert(0) += 1;
            *pair_counts.entry((j, i)).or_insert(0) += 1;
            marginal_counts[i] += 1;
            marginal_counts[j] += 1;
        }
        let mut stats = Self {
            vocab,
            pair_counts,
            marginal_counts,
            total_pairs: 2 * pairs.len() as u64,
            alpha: 0.0,
        };
        stats.alpha = stats.default_alpha();
        stats
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// 0 when every token has a positive marginal, 1 otherwise.
    pub fn default_alpha(&self) -> f64 {
        if self.marginal_counts.iter().all(|&m| m > 0) {
            0.0
        } else {
            1.0
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.pair_counts
            .iter()
            .all(|(&(i, j), c)| self.pair_counts.get(&(j, i)) == Some(c))
    }

    /// Text form: header lines `K`, `total_pairs`, `alpha`, `vocab`, then one
    /// `i j count` line per nonzero entry in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "K {}", self.vocab_size()).unwrap();
        writeln!(out, "total_pairs {}", self.total_pairs).unwrap();
        writeln!(out, "alpha {}", self.alpha).unwrap();
        out.push_str("vocab");
        for token in self.vocab.keys() {
            write!(out, " {token}").unwrap();
        }
        out.push('\n');
        for (&(i, j), c) in &self.pair_counts {
            writeln!(out, "{i} {j} {c}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CoocError> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String, CoocError> {
            let (n, line) = lines.next().ok_or(CoocError::Parse {
                line: 0,
                reason: format!("missing {key} header"),
            })?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or(CoocError::Parse {
                    line: n + 1,
                    reason: format!("expected {key} header"),
                })
        };
        let parse_err = |line: usize, what: &str| CoocError::Parse {
            line,
            reason: format!("bad {what}"),
        };
        let k: usize = header("K")?.parse().map_err(|_| parse_err(1, "K"))?;
        let total_pairs: u64 = header("total_pairs")?.parse().map_err(|_| parse_err(2, "total_pairs"))?;
        let alpha: f64 = header("alpha")?.parse().map_err(|_| parse_err(3, "alpha"))?;
        let tokens = header("vocab")?
            .split_whitespace()
            .map(|t| t.parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err(4, "vocab"))?;
        if tokens.len() != k || tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(parse_err(4, "vocab (length or order)"));
        }
        let vocab = tokens.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut pair_counts = BTreeMap::new();
        let mut marginal_counts = vec![0u64; k];
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [i, j, c] => (i.parse::<usize>(), j.parse::<usize>(), c.parse::<u64>()),
                _ => return Err(parse_err(n + 1, "count line")),
            };
            let (Ok(i), Ok(j), Ok(c)) = parsed else {
                return Err(parse_err(n + 1, "count line"));
            };
            if i >= k || j >= k {
                return Err(parse_err(n + 1, "token index"));
            }
            pair_counts.insert((i, j), c);
            marginal_counts[i] += c;
        }
        let stats = Self {
            vocab,
            pair_counts,
            marginal_counts,
            total_pairs,
            alpha,
        };
        let sum: u64 = stats.pair_counts.values().sum();
        if sum != total_pairs {
            return Err(CoocError::Parse {
                line: 2,
                reason: format!("counts sum to {sum}, header says {total_pairs}"),
            });
        }
        Ok(stats)
    }
}

/// Draws `pairs_per_image` patch pairs from every image, tokenizes both
/// patches after augmentation, and counts them.
///
/// One seed is drawn from `rng`; image `n` then samples from its own stream
/// `n`, so the result does not depend on the thread count.
pub fn count_cooc<R: Rng + ?Sized>(
    images: &[ImageRecord],
    src_size: usize,
    canonical: usize,
    pairs_per_image: usize,
    tokenizer: &Tokenizer,
    aug: &AugmentParams,
    rng: &mut R,
) -> Result<CoocStats, CoocError> {
    if pairs_per_image == 0 {
        return Err(CoocError::InvalidArgument("pairs_per_image must be at least 1".into()));
    }
    if let Some(first) = images.first() {
        tokenizer.validate(first.channels)?;
    }
    aug.validate()?;
    let seed: u64 = rng.random();
    let per_image = images
        .par_iter()
        .enumerate()
        .map(|(n, img)| {
            let mut local = crate::seeded_rng(seed, n as u64);
            (0..pairs_per_image)
                .map(|_| {
                    let (a, b) = sample_patch_pair(img, src_size, canonical, aug, &mut local)?;
                    Ok((tokenizer.tokenize(&a), tokenizer.tokenize(&b)))
                })
                .collect::<Result<Vec<_>, CoocError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoocStats::from_token_pairs(&per_image.concat()))
}

/// Smoothed joint `(count + alpha) / (total + alpha K^2)` with marginals
/// recomputed from it.
pub fn ratio_matrix(stats: &CoocStats) -> Result<DiscreteCooc, CoocError> {
    if stats.total_pairs == 0 || stats.vocab_size() == 0 {
        return Err(CoocError::EmptyStats);
    }
    let k = stats.vocab_size();
    let alpha = stats.alpha;
    let denom = stats.total_pairs as f64 + alpha * (k * k) as f64;
    let mut joint = Array2::from_elem((k, k), alpha / denom);
    for (&(i, j), &c) in &stats.pair_counts {
        joint[[i, j]] = (c as f64 + alpha) / denom;
    }
    Ok(DiscreteCooc::new(joint)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_is_symmetrized() {
        let s = CoocStats::from_token_pairs(&[(42, 42)]);
        assert_eq!(s.pair_counts.get(&(0, 0)), Some(&2));
        assert_eq!(s.total_pairs, 2);
        assert_eq!(s.marginal_counts, vec![2]);
    }

    #[test]
    fn text_round_trip() {
        let s = CoocStats::from_token_pairs(&[(5, 9), (9, 9), (1, 5), (5, 5)]);
        assert!(s.is_symmetric());
        let text = s.to_text();
        assert!(text.starts_with("K 3\ntotal_pairs 8\nalpha 0\nvocab 1 5 9\n0 1 1\n"));
        assert_eq!(CoocStats::from_text(&text).unwrap(), s);
        assert!(CoocStats::from_text(&text.replace("total_pairs 8", "total_pairs 9")).is_err());
    }

    #[test]
    fn exclusive_pair_ratio_is_inverse_marginal() {
        // Tokens 0 and 1 always appear together, token 2 only with itself.
        let mut pairs = vec![(0, 1); 3];
        pairs.push((2, 2));
        let s = CoocStats::from_token_pairs(&pairs);
        let dc = ratio_matrix(&s).unwrap();
        // p(0) = 3/8, joint(0,1) = 3/8, so ratio = (3/8) / (3/8)^2 = 8/3.
        assert!((dc.ratio(0, 1) - 1.0 / dc.p1[0]).abs() < 1e-12);
        assert!((dc.ratio(0, 1) - 8.0 / 3.0).abs() < 1e-12);
        assert!((dc.ratio(2, 2) - 4.0).abs() < 1e-12);
        assert_eq!(dc.joint, dc.joint.t());
    }

    #[test]
    fn independent_counts_give_unit_ratio() {
        // counts(i,j) = m_i m_j with m = (1, 2, 3).
        let m = [1u64, 2, 3];
        let mut stats = CoocStats::from_token_pairs(&[(0, 1), (1, 2), (0, 2)]);
        stats.pair_counts.clear();
        for i in 0..3 {
            for j in 0..3 {
                stats.pair_counts.insert((i, j), m[i] * m[j]);
            }
        }
        stats.total_pairs = 36;
        let dc = ratio_matrix(&stats).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((dc.ratio(i, j) - 1.0).abs() < 1e-12);
            }
        }
        assert!((dc.joint.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_stats_rejected() {
        let s = CoocStats::from_token_pairs(&[]);
        assert!(matches!(ratio_matrix(&s), Err(CoocError::EmptyStats)));
    }
}
