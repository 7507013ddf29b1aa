use std::path::Path;

use super::pool::InstancePool;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: format!("file truncated while reading {what}"),
        })
}

/// Parses an IDX image/label pair held in memory.
pub(crate) fn parse_idx(images: &[u8], labels: &[u8]) -> Result<InstancePool> {
    let magic = be_u32(images, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::Format {
            offset: 8,
            msg: format!("empty image shape {rows}x{cols}"),
        });
    }

    let magic = be_u32(labels, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{count} images but {label_count} labels"),
        });
    }

    let pixels = &images[16..];
    if pixels.len() < count * dim {
        return Err(Error::Format {
            offset: images.len() as u64,
            msg: format!("image data truncated: need {} bytes after header", count * dim),
        });
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Format {
            offset: labels.len() as u64,
            msg: format!("label data truncated: need {count} bytes after header"),
        });
    }

    let features = pixels[..count * dim]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    InstancePool::new(dim, features, label_bytes[..count].to_vec())
}

/// Loads an IDX image file (magic `0x00000803`) and its label file (magic
/// `0x00000801`). Pixels are scaled into `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<InstancePool> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}
