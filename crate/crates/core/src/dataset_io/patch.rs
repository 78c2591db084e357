use rand::Rng;

use super::{color_augment, AugmentParams, DataError, ImageRecord};

/// A square crop resized to the canonical side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image_id: usize,
    pub x: usize,
    pub y: usize,
    /// Side length of the crop in the source image.
    pub src_size: usize,
    pub canonical_size: usize,
    pub channels: usize,
    /// `channels * canonical_size^2` values, channel-major.
    pub pixels: Vec<f64>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let s = self.canonical_size;
        self.pixels[(c * s + y) * s + x]
    }
}

/// Source coordinates of the `out` output samples over a crop of side `src`.
///
/// Corner-aligned: the first and last output samples land exactly on the
/// first and last source pixels. A single output sample sits at the centre.
pub fn bilinear_sample_coords(src: usize, out: usize) -> Vec<f64> {
    if out == 1 {
        return vec![(src as f64 - 1.0) / 2.0];
    }
    (0..out)
        .map(|i| (i * (src - 1)) as f64 / (out - 1) as f64)
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn split(coord: f64, src: usize) -> (usize, usize, f64) {
    let lo = (coord.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, coord - lo as f64)
}

/// Crops the `src_size` square at `(x, y)` and resizes it to `canonical`
/// with bilinear interpolation.
pub fn extract_patch(
    img: &ImageRecord,
    x: usize,
    y: usize,
    src_size: usize,
    canonical: usize,
) -> Result<Patch, DataError> {
    if canonical == 0 {
        return Err(DataError::Geometry("canonical size must be >= 1".into()));
    }
    if src_size == 0 || x + src_size > img.width || y + src_size > img.height {
        return Err(DataError::OutOfBounds {
            x,
            y,
            size: src_size,
            width: img.width,
            height: img.height,
        });
    }
    let s = canonical;
    let mut pixels = Vec::with_capacity(img.channels * s * s);
    if src_size == s {
        for c in 0..img.channels {
            for row in y..y + s {
                let start = (c * img.height + row) * img.width + x;
                pixels.extend_from_slice(&img.pixels[start..start + s]);
            }
        }
    } else {
        let coords = bilinear_sample_coords(src_size, s);
        let taps: Vec<_> = coords.iter().map(|&c| split(c, src_size)).collect();
        for c in 0..img.channels {
            for &(y0, y1, fy) in &taps {
                for &(x0, x1, fx) in &taps {
                    let top = lerp(img.at(c, y + y0, x + x0), img.at(c, y + y0, x + x1), fx);
                    let bottom = lerp(img.at(c, y + y1, x + x0), img.at(c, y + y1, x + x1), fx);
                    pixels.push(lerp(top, bottom, fy));
                }
            }
        }
    }
    Ok(Patch {
        image_id: img.id,
        x,
        y,
        src_size,
        canonical_size: s,
        channels: img.channels,
        pixels,
    })
}

/// The largest centred square, resized to `canonical`.
pub fn center_crop(img: &ImageRecord, canonical: usize) -> Result<Patch, DataError> {
    let side = img.min_side();
    extract_patch(
        img,
        (img.width - side) / 2,
        (img.height - side) / 2,
        side,
        canonical,
    )
}

fn uniform_position<R: Rng + ?Sized>(img: &ImageRecord, side: usize, rng: &mut R) -> (usize, usize) {
    let x = rng.random_range(0..=img.width - side);
    let y = rng.random_range(0..=img.height - side);
    (x, y)
}

/// Two independently placed, independently colour-augmented patches of the
/// same image.
pub fn sample_patch_pair<R: Rng + ?Sized>(
    img: &ImageRecord,
    src_size: usize,
    canonical: usize,
    aug: &AugmentParams,
    rng: &mut R,
) -> Result<(Patch, Patch), DataError> {
    if src_size == 0 || src_size > img.min_side() {
        return Err(DataError::OutOfBounds {
            x: 0,
            y: 0,
            size: src_size,
            width: img.width,
            height: img.height,
        });
    }
    let (x1, y1) = uniform_position(img, src_size, rng);
    let (x2, y2) = uniform_position(img, src_size, rng);
    let a = extract_patch(img, x1, y1, src_size, canonical)?;
    let b = extract_patch(img, x2, y2, src_size, canonical)?;
    Ok((color_augment(&a, aug, rng), color_augment(&b, aug, rng)))
}

/// Multi-scale square crop: the area fraction is uniform in
/// `[min_scale, max_scale]`, the side is the rounded square root of the
/// area, clamped to the image.
pub fn random_resized_crop<R: Rng + ?Sized>(
    img: &ImageRecord,
    min_scale: f64,
    max_scale: f64,
    canonical: usize,
    rng: &mut R,
) -> Result<Patch, DataError> {
    if !(min_scale > 0.0 && min_scale <= max_scale && max_scale <= 1.0) {
        return Err(DataError::InvalidScale {
            min: min_scale,
            max: max_scale,
        });
    }
    let area = min_scale + (max_scale - min_scale) * rng.random::<f64>();
    let side = (area * (img.width * img.height) as f64).sqrt().round() as usize;
    let side = side.clamp(1, img.min_side());
    let (x, y) = uniform_position(img, side, rng);
    extract_patch(img, x, y, side, canonical)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp_image(w: usize, h: usize, c: usize) -> ImageRecord {
        let n = w * h * c;
        let pixels = (0..n).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        ImageRecord::new(0, w, h, c, pixels, None).unwrap()
    }

    /// Scalar bilinear evaluation at an arbitrary point of a small grid.
    fn scalar_bilinear(grid: &[[f64; 2]; 2], u: f64, v: f64) -> f64 {
        (1.0 - v) * ((1.0 - u) * grid[0][0] + u * grid[0][1])
            + v * ((1.0 - u) * grid[1][0] + u * grid[1][1])
    }

    #[test]
    fn identity_resize_is_raw_crop() {
        let img = ramp_image(10, 8, 3);
        let p = extract_patch(&img, 2, 1, 5, 5).unwrap();
        for c in 0..3 {
            for yy in 0..5 {
                for xx in 0..5 {
                    assert_eq!(p.at(c, yy, xx), img.at(c, 1 + yy, 2 + xx));
                }
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageRecord::constant(0, 13, 11, 3, 0.37);
        for (src, s) in [(5, 9), (11, 3), (7, 1), (4, 4)] {
            let p = extract_patch(&img, 1, 0, src, s).unwrap();
            assert!(p.pixels.iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn upsample_2x2_matches_scalar_oracle() {
        let img = ImageRecord::new(0, 2, 2, 1, vec![0.0, 1.0, 1.0, 0.0], None).unwrap();
        let p = extract_patch(&img, 0, 0, 2, 4).unwrap();
        let grid = [[0.0, 1.0], [1.0, 0.0]];
        // Frozen from the scalar oracle at the corner-aligned grid {0, 1/3, 2/3, 1}.
        let expected = [
            0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, //
            1.0 / 3.0, 4.0 / 9.0, 5.0 / 9.0, 2.0 / 3.0, //
            2.0 / 3.0, 5.0 / 9.0, 4.0 / 9.0, 1.0 / 3.0, //
            1.0, 2.0 / 3.0, 1.0 / 3.0, 0.0,
        ];
        for yy in 0..4 {
            for xx in 0..4 {
                let oracle = scalar_bilinear(&grid, xx as f64 / 3.0, yy as f64 / 3.0);
                assert!((oracle - expected[yy * 4 + xx]).abs() < 1e-15);
                assert!((p.at(0, yy, xx) - expected[yy * 4 + xx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_bounds_crop() {
        let img = ramp_image(8, 8, 1);
        assert!(matches!(
            extract_patch(&img, 4, 0, 5, 5),
            Err(DataError::OutOfBounds { .. })
        ));
        assert!(extract_patch(&img, 0, 0, 8, 0).is_err());
    }

    #[test]
    fn full_size_pair_has_one_position() {
        let img = ramp_image(32, 32, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = sample_patch_pair(&img, 32, 32, &AugmentParams::default(), &mut rng).unwrap();
        assert_eq!((a.x, a.y, b.x, b.y), (0, 0, 0, 0));
    }

    #[test]
    fn pair_is_seed_deterministic() {
        let img = ramp_image(32, 32, 3);
        let aug = AugmentParams::default();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            sample_patch_pair(&img, 14, 32, &aug, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn pair_too_large() {
        let img = ramp_image(10, 12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_patch_pair(&img, 11, 4, &AugmentParams::identity(), &mut rng).is_err());
    }

    #[test]
    fn rrc_full_scale_is_whole_image() {
        let img = ramp_image(16, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_resized_crop(&img, 1.0, 1.0, 16, &mut rng).unwrap();
        assert_eq!((p.x, p.y, p.src_size), (0, 0, 16));
        assert_eq!(p.pixels, img.pixels);
    }

    #[test]
    fn rrc_invalid_interval() {
        let img = ramp_image(16, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (lo, hi) in [(0.0, 1.0), (0.5, 0.4), (0.5, 1.5)] {
            assert!(matches!(
                random_resized_crop(&img, lo, hi, 8, &mut rng),
                Err(DataError::InvalidScale { .. })
            ));
        }
    }

    #[test]
    fn center_crop_of_rectangle() {
        let img = ramp_image(12, 8, 1);
        let p = center_crop(&img, 8).unwrap();
        assert_eq!((p.x, p.y, p.src_size), (2, 0, 8));
    }
}
