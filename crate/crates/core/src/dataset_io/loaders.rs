use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use super::{DataError, ImageRecord};

/// One label byte followed by a 32x32x3 channel-major image.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads one CIFAR-10 binary batch file.
pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>, DataError> {
    load_cifar10_from(path.as_ref(), 0)
}

/// Loads several CIFAR-10 batch files with ids running on across files.
pub fn load_cifar10_batches<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<ImageRecord>, DataError> {
    let mut out = Vec::new();
    for p in paths {
        let mut batch = load_cifar10_from(p.as_ref(), out.len())?;
        out.append(&mut batch);
    }
    Ok(out)
}

fn load_cifar10_from(path: &Path, first_id: usize) -> Result<Vec<ImageRecord>, DataError> {
    let bytes = read_file(path)?;
    if bytes.is_empty() {
        return Err(malformed(path, "empty file"));
    }
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(malformed(
            path,
            format!(
                "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                bytes.len()
            ),
        ));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let label = rec[0];
            if label > 9 {
                return Err(malformed(
                    path,
                    format!("record {index}: label byte {label} > 9"),
                ));
            }
            Ok(ImageRecord {
                id: first_id + index,
                width: 32,
                height: 32,
                channels: 3,
                pixels: rec[1..].iter().map(|&b| f64::from(b) / 255.0).collect(),
                label: Some(label),
            })
        })
        .collect()
}

fn read_header(
    path: &Path,
    bytes: &[u8],
    expected: u32,
    dims: usize,
) -> Result<Vec<usize>, DataError> {
    let header_len = 4 * (dims + 1);
    if bytes.len() < header_len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header_len,
            found: bytes.len(),
        });
    }
    let mut cur = Cursor::new(bytes);
    let mut word = || cur.read_u32::<BigEndian>().expect("length checked");
    let magic = word();
    if magic != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found: magic,
        });
    }
    Ok((0..dims).map(|_| word() as usize).collect())
}

/// Loads an IDX image file (`0x00000803`, unsigned bytes, N x rows x cols)
/// together with its IDX label file (`0x00000801`).
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Vec<ImageRecord>, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let dims = read_header(images_path, &image_bytes, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);

    let label_count = read_header(labels_path, &label_bytes, IDX_LABELS_MAGIC, 1)?[0];

    if count != label_count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if count == 0 {
        return Err(malformed(images_path, "zero records"));
    }
    if rows == 0 || cols == 0 {
        return Err(malformed(images_path, "zero-sized images"));
    }

    let pixel_start = 16;
    let per_image = rows * cols;
    let expected = pixel_start + count * per_image;
    if image_bytes.len() < expected {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            expected,
            found: image_bytes.len(),
        });
    }
    let label_start = 8;
    if label_bytes.len() < label_start + count {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            expected: label_start + count,
            found: label_bytes.len(),
        });
    }

    let payload = &image_bytes[pixel_start..expected];
    Ok(payload
        .chunks_exact(per_image)
        .zip(&label_bytes[label_start..label_start + count])
        .enumerate()
        .map(|(id, (px, &label))| ImageRecord {
            id,
            width: cols,
            height: rows,
            channels: 1,
            pixels: px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label: Some(label),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(bytes).unwrap();
        f
    }

    fn idx_images(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        v.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    #[test]
    fn empty_cifar_file_is_an_error() {
        let f = write_tmp(&[]);
        assert!(matches!(
            load_cifar10(f.path()),
            Err(DataError::Malformed { .. })
        ));
    }

    #[test]
    fn cifar_saturated_record() {
        let mut rec = vec![255u8; CIFAR_RECORD_BYTES];
        rec[0] = 3;
        let f = write_tmp(&rec);
        let imgs = load_cifar10(f.path()).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].label, Some(3));
        assert_eq!((imgs[0].width, imgs[0].height, imgs[0].channels), (32, 32, 3));
        assert!(imgs[0].pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn cifar_bad_length_and_label() {
        let f = write_tmp(&vec![0u8; CIFAR_RECORD_BYTES + 5]);
        assert!(matches!(
            load_cifar10(f.path()),
            Err(DataError::Malformed { .. })
        ));

        let mut two = vec![0u8; 2 * CIFAR_RECORD_BYTES];
        two[CIFAR_RECORD_BYTES] = 10;
        let f = write_tmp(&two);
        let err = load_cifar10(f.path()).unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn cifar_missing_file() {
        assert!(matches!(
            load_cifar10("/nonexistent/data_batch_1.bin"),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn idx_hand_decoded_fixture() {
        let imgs = write_tmp(&idx_images(1, 2, 2, &[0, 128, 255, 64]));
        let labels = write_tmp(&idx_labels(&[7]));
        let recs = load_idx(imgs.path(), labels.path()).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.width, r.height, r.channels, r.label), (2, 2, 1, Some(7)));
        assert_eq!(r.pixels, vec![0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn idx_count_mismatch() {
        let imgs = write_tmp(&idx_images(10, 1, 1, &[0; 10]));
        let labels = write_tmp(&idx_labels(&[0; 9]));
        assert!(matches!(
            load_idx(imgs.path(), labels.path()),
            Err(DataError::CountMismatch {
                images: 10,
                labels: 9
            })
        ));
    }

    #[test]
    fn idx_zero_payload() {
        let imgs = write_tmp(&idx_images(3, 4, 4, &[0; 48]));
        let labels = write_tmp(&idx_labels(&[0, 1, 2]));
        let recs = load_idx(imgs.path(), labels.path()).unwrap();
        assert!(recs.iter().flat_map(|r| &r.pixels).all(|&p| p == 0.0));
        assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let mut bad = idx_images(1, 2, 2, &[0; 4]);
        bad[3] = 0x02;
        let imgs = write_tmp(&bad);
        let labels = write_tmp(&idx_labels(&[0]));
        assert!(matches!(
            load_idx(imgs.path(), labels.path()),
            Err(DataError::BadMagic { .. })
        ));

        let imgs = write_tmp(&idx_images(2, 2, 2, &[0; 5]));
        let labels = write_tmp(&idx_labels(&[0, 1]));
        assert!(matches!(
            load_idx(imgs.path(), labels.path()),
            Err(DataError::Truncated { .. })
        ));
    }
}
