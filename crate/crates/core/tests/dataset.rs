use std::io::Write;

use bagssl_core::dataset_io::{
    load_cifar10, random_resized_crop, sample_patch_pair, AugmentParams, ImageRecord, CIFAR_RECORD_BYTES,
};
use bagssl_core::seeded_rng;

fn cifar_fixture(records: usize) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(records * CIFAR_RECORD_BYTES);
    for r in 0..records {
        bytes.push((r * 3 % 10) as u8);
        for i in 0..3072 {
            bytes.push(((i * 7 + r * 131) % 256) as u8);
        }
    }
    bytes
}

#[test]
fn cifar_loader_matches_raw_byte_offsets() {
    let bytes = cifar_fixture(4);
    let mut file = tempfile::NamedTempFile::new().unwrap();
    file.write_all(&bytes).unwrap();
    let images = load_cifar10(file.path()).unwrap();
    assert_eq!(images.len(), 4);
    for (r, img) in images.iter().enumerate() {
        let rec = &bytes[r * 3073..(r + 1) * 3073];
        assert_eq!(img.label, Some(rec[0]));
        assert_eq!((img.width, img.height, img.channels), (32, 32, 3));
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let raw = rec[1 + c * 1024 + y * 32 + x] as f64 / 255.0;
                    assert_eq!(img.pixels[(c * 32 + y) * 32 + x], raw);
                }
            }
        }
    }
}

fn gray(side: usize) -> ImageRecord {
    let pixels = (0..side * side).map(|i| (i % 251) as f64 / 250.0).collect();
    ImageRecord::new(0, side, side, 1, pixels, None).unwrap()
}

#[test]
fn patch_positions_are_uniform() {
    let img = gray(32);
    let mut rng = seeded_rng(11, 0);
    let aug = AugmentParams::identity();
    let mut counts = [0u32; 19];
    let draws = 100_000;
    for _ in 0..draws {
        let (a, _) = sample_patch_pair(&img, 14, 14, &aug, &mut rng).unwrap();
        counts[a.x] += 1;
    }
    let expected = draws as f64 / 19.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-square with 18 degrees of freedom.
    assert!(chi2 < 42.312, "chi-square {chi2}");
}

#[test]
fn random_resized_crop_side_spans_the_scale_interval() {
    for (side, lo, hi) in [(32usize, 9usize, 32usize), (224, 63, 224)] {
        let img = gray(side);
        let mut rng = seeded_rng(5, side as u64);
        let sides: Vec<usize> = (0..4000)
            .map(|_| random_resized_crop(&img, 0.08, 1.0, 8, &mut rng).unwrap().src_size)
            .collect();
        let (min, max) = (*sides.iter().min().unwrap(), *sides.iter().max().unwrap());
        assert!(min >= lo && max <= hi, "{side}: {min}..{max}");
        assert!(min <= lo + 2 && max >= hi - 2, "{side}: {min}..{max} does not reach the ends");
    }
}
