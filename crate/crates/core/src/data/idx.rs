//! Big-endian IDX files with unsigned byte payloads.

use std::path::Path;

use crate::error::{Error, Result};

pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxTensor {
    Labels(Vec<u8>),
    /// Images scaled to `[0, 1]`: `count × rows × cols` in row-major order.
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<f64> },
}

impl IdxTensor {
    /// The image at `i` as a row-major `rows × cols` slice.
    pub fn image(&self, i: usize) -> Option<&[f64]> {
        match self {
            IdxTensor::Images { count, rows, cols, pixels } if i < *count => {
                let len = rows * cols;
                Some(&pixels[i * len..(i + 1) * len])
            }
            _ => None,
        }
    }
}

fn read_u32(bytes: &[u8], off: usize) -> Result<u32> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(off, "truncated header"))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        LABEL_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let payload = &bytes[8..];
            if payload.len() < count {
                return Err(Error::format(8 + payload.len(), format!("expected {count} labels")));
            }
            Ok(IdxTensor::Labels(payload[..count].to_vec()))
        }
        IMAGE_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            let total = count
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
            let payload = &bytes[16..];
            if payload.len() < total {
                return Err(Error::format(16 + payload.len(), format!("expected {total} pixel bytes")));
            }
            let pixels = payload[..total].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(IdxTensor::Images { count, rows, cols, pixels })
        }
        other => Err(Error::format(0, format!("bad magic number 0x{other:08X}"))),
    }
}

pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    parse_idx(&std::fs::read(path)?)
}

/// Serializes a tensor; image pixels are rounded back to bytes.
pub fn write_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::new();
    match t {
        IdxTensor::Labels(l) => {
            out.extend(LABEL_MAGIC.to_be_bytes());
            out.extend((l.len() as u32).to_be_bytes());
            out.extend(l);
        }
        IdxTensor::Images { count, rows, cols, pixels } => {
            out.extend(IMAGE_MAGIC.to_be_bytes());
            for d in [count, rows, cols] {
                out.extend((*d as u32).to_be_bytes());
            }
            out.extend(pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
        }
    }
    out
}

/// Digits `0..=4` become class 0, `5..=9` class 1.
pub fn binarize_labels(labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&y| match y {
            0..=4 => Ok(0),
            5..=9 => Ok(1),
            _ => Err(Error::input(format!("label {y} outside 0..10"))),
        })
        .collect()
}
