//! IDX image and label files, optionally gzip-compressed.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use fitnets_core::data::Dataset;
use fitnets_core::netarch::FeatureShape;
use fitnets_core::Scalar;

use crate::error::{FitError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Class count assumed for digit files: labels are read as 10-way unless a
/// larger label appears.
pub const DEFAULT_CLASSES: usize = 10;

/// File contents, transparently gunzipped when the gzip signature is present.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| FitError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| FitError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_len(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(FitError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(FitError::Usage(format!(
            "{}: {} trailing bytes after the declared {expected}",
            path.display(),
            actual - expected
        )));
    }
    Ok(())
}

fn header(path: &Path, bytes: &[u8], magic: u32, words: usize) -> Result<Vec<u32>> {
    check_magic(path, bytes, magic)?;
    let need = 4 * (1 + words) as u64;
    if (bytes.len() as u64) < need {
        return Err(FitError::Truncated {
            path: path.to_path_buf(),
            expected: need,
            actual: bytes.len() as u64,
        });
    }
    Ok((1..=words).map(|i| be_u32(bytes, 4 * i)).collect())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    if bytes.len() < 4 {
        return Err(FitError::Truncated {
            path: path.to_path_buf(),
            expected: 4,
            actual: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(FitError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// `(pixels scaled to [0, 1], n, rows, cols)`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(Vec<Scalar>, usize, usize, usize)> {
    let h = header(path, bytes, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (h[0] as usize, h[1] as usize, h[2] as usize);
    check_len(path, bytes, 16 + (n as u64) * (rows as u64) * (cols as u64))?;
    let pixels = bytes[16..].iter().map(|&b| Scalar::from(b) / 255.0).collect();
    Ok((pixels, n, rows, cols))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    let h = header(path, bytes, LABELS_MAGIC, 1)?;
    check_len(path, bytes, 8 + u64::from(h[0]))?;
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label IDX pair as a one-channel dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (pixels, n, rows, cols) = parse_images(images_path, &read_maybe_gz(images_path)?)?;
    let labels = parse_labels(labels_path, &read_maybe_gz(labels_path)?)?;
    if labels.len() != n {
        return Err(FitError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(DEFAULT_CLASSES);
    let shape = FeatureShape::new(1, rows.max(1), cols.max(1));
    Ok(Dataset::new(pixels, shape, labels, classes)?)
}

/// IDX bytes for single-channel images with byte pixels.
pub fn encode_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
