use rand::Rng;

use super::{DataError, Patch};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Colour jitter, grayscale and flip settings applied to training patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub saturation_range: (f64, f64),
    pub grayscale_prob: f64,
    pub flip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            brightness_range: (0.6, 1.4),
            contrast_range: (0.6, 1.4),
            saturation_range: (0.6, 1.4),
            grayscale_prob: 0.2,
            flip_prob: 0.5,
        }
    }
}

impl AugmentParams {
    /// Leaves every patch untouched.
    pub fn identity() -> Self {
        Self {
            brightness_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            saturation_range: (1.0, 1.0),
            grayscale_prob: 0.0,
            flip_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (name, p) in [("grayscale_prob", self.grayscale_prob), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::InvalidAugment(format!("{name} = {p} not in [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("brightness", self.brightness_range),
            ("contrast", self.contrast_range),
            ("saturation", self.saturation_range),
        ] {
            if !((0.0..=1.0).contains(&lo) && 1.0 <= hi && hi.is_finite()) {
                return Err(DataError::InvalidAugment(format!(
                    "{name} range ({lo}, {hi}) must be non-negative and contain 1"
                )));
            }
        }
        Ok(())
    }
}

fn draw_factor<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn luma(pixels: &[f64], plane: usize, i: usize, channels: usize) -> f64 {
    if channels == 3 {
        LUMA[0] * pixels[i] + LUMA[1] * pixels[plane + i] + LUMA[2] * pixels[2 * plane + i]
    } else {
        pixels[i]
    }
}

/// Random horizontal flip, brightness/contrast/saturation jitter and
/// grayscale conversion, in that order. Output is clamped to `[0, 1]`.
///
/// Exactly five values are drawn from `rng` per call whatever the
/// parameters, so streams stay aligned across configurations.
pub fn color_augment<R: Rng + ?Sized>(patch: &Patch, aug: &AugmentParams, rng: &mut R) -> Patch {
    let flip = rng.random::<f64>() < aug.flip_prob;
    let brightness = draw_factor(aug.brightness_range, rng);
    let contrast = draw_factor(aug.contrast_range, rng);
    let saturation = draw_factor(aug.saturation_range, rng);
    let gray = rng.random::<f64>() < aug.grayscale_prob;

    let s = patch.canonical_size;
    let ch = patch.channels;
    let plane = s * s;
    let mut px = patch.pixels.clone();

    if flip {
        for row in px.chunks_exact_mut(s) {
            row.reverse();
        }
    }
    if brightness != 1.0 {
        for v in &mut px {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
    }
    if contrast != 1.0 {
        let mean = (0..plane).map(|i| luma(&px, plane, i, ch)).sum::<f64>() / plane as f64;
        for v in &mut px {
            *v = (mean + contrast * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if saturation != 1.0 && ch == 3 {
        for i in 0..plane {
            let g = luma(&px, plane, i, ch);
            for c in 0..3 {
                let v = &mut px[c * plane + i];
                *v = (g + saturation * (*v - g)).clamp(0.0, 1.0);
            }
        }
    }
    if gray && ch == 3 {
        for i in 0..plane {
            let g = luma(&px, plane, i, ch).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c * plane + i] = g;
            }
        }
    }

    Patch {
        pixels: px,
        ..patch.clone()
    }
}
