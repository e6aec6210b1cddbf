use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::{DataError, Dataset};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io_err)?;
    // gzip member header
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.display().to_string(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Read an IDX image/label file pair (optionally gzip-compressed). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = read_all(images)?;
    let lab = read_all(labels)?;

    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }

    let n_images = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels = rows * cols;
    let payload = &img[16..];
    if payload.len() < n_images * pixels {
        return Err(DataError::Truncated {
            path: images.display().to_string(),
            expected: n_images * pixels,
            found: payload.len(),
        });
    }
    let label_bytes = &lab[8..];
    if label_bytes.len() < n_labels {
        return Err(DataError::Truncated {
            path: labels.display().to_string(),
            expected: n_labels,
            found: label_bytes.len(),
        });
    }

    let features = Array2::from_shape_fn((n_images, pixels), |(i, j)| f64::from(payload[i * pixels + j]) / 255.0);
    let labels: Vec<usize> = label_bytes[..n_labels].iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(10);
    let ds = Dataset {
        features,
        labels,
        n_classes,
        feature_names: (0..pixels).map(|p| format!("px{p}")).collect(),
        class_names: (0..n_classes).map(|c| c.to_string()).collect(),
        normalization: None,
    };
    ds.validate()?;
    Ok(ds)
}
