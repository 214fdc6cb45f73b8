//! Reader for the big-endian IDX ubyte format used by the MNIST family of datasets.
//!
//! Images: magic `0x00000803`, count, rows, cols, then `count * rows * cols` bytes.
//! Labels: magic `0x00000801`, count, then `count` bytes.

use std::path::Path;

use super::{DataError, Dataset};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated { path: path.to_owned(), expected: offset + 4, found: bytes.len() })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic { path: path.to_owned(), expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8], DataError> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(DataError::Truncated { path: path.to_owned(), expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DataError::Invalid(format!(
            "{}: {} trailing bytes after IDX payload",
            path.display(),
            bytes.len() - expected
        )));
    }
    Ok(&bytes[header..])
}

pub(crate) struct IdxImages {
    pub count: usize,
    pub pixels_per_image: usize,
    pub pixels: Vec<u8>,
}

pub(crate) fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages, DataError> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let pixels_per_image = rows * cols;
    let pixels = payload(bytes, 16, count * pixels_per_image, path)?.to_vec();
    Ok(IdxImages { count, pixels_per_image, pixels })
}

pub(crate) fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, count, path)?.to_vec())
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io { path: path.to_owned(), source })
}

/// Loads an image/label file pair; pixels are scaled to `[0, 1]` and flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = parse_images(&read_file(images_path)?, images_path)?;
    let labels = parse_labels(&read_file(labels_path)?, labels_path)?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    if images.pixels_per_image == 0 {
        return Err(DataError::Invalid(format!("{}: zero-sized images", images_path.display())));
    }
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, images.pixels_per_image, num_classes)
}

/// Serializes images (each `rows * cols` bytes) into IDX bytes.
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
