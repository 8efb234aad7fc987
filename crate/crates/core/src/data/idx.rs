//! IDX image/label container: big-endian magic, big-endian 32-bit dimension
//! sizes, then raw bytes. Images use magic `0x00000803` (unsigned bytes,
//! three dimensions), labels `0x00000801`.

use std::fs;
use std::path::Path;

use crate::tensor::{Scalar, Tensor};

use super::DataError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Read an IDX image file into an `[N, H, W]` tensor with intensities
/// scaled to `[0, 1]` (byte 255 maps to exactly 1.0).
pub fn read_idx_images<S: Scalar>(path: &Path) -> Result<Tensor<S>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path, "image count")? as usize;
    let h = read_u32_be(&bytes, 8, path, "image height")? as usize;
    let w = read_u32_be(&bytes, 12, path, "image width")? as usize;
    let expected = 16 + n * h * w;
    if bytes.len() != expected {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected) as u64,
            detail: format!(
                "payload holds {} bytes, header promises {}",
                bytes.len() - 16.min(bytes.len()),
                n * h * w
            ),
        });
    }
    let inv = 1.0 / 255.0;
    let data: Vec<S> = bytes[16..]
        .iter()
        .map(|&b| S::from_f64(f64::from(b) * inv))
        .collect();
    Tensor::from_vec(&[n, h, w], data).map_err(|e| DataError::Contract {
        detail: e.to_string(),
    })
}

/// Read an IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    let magic = read_u32_be(&bytes, 0, path, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let n = read_u32_be(&bytes, 4, path, "label count")? as usize;
    if bytes.len() != 8 + n {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            offset: bytes.len().min(8 + n) as u64,
            detail: format!("payload holds {} labels, header promises {n}", bytes.len() - 8.min(bytes.len())),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// Write `n` grayscale images of `h x w` raw bytes.
pub fn write_idx_images(path: &Path, n: usize, h: usize, w: usize, pixels: &[u8]) -> Result<(), DataError> {
    if pixels.len() != n * h * w {
        return Err(DataError::Contract {
            detail: format!(
                "pixel buffer holds {} bytes, dimensions require {}",
                pixels.len(),
                n * h * w
            ),
        });
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}

/// Write a label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
