//! Reader and writer for the IDX container used by MNIST.
//!
//! Layout: big-endian `u32` magic, big-endian `u32` dimension sizes, then raw
//! unsigned bytes. Image files use magic `0x00000803` (count, rows, cols); label
//! files use `0x00000801` (count).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxFile {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        /// `count * rows * cols` bytes, one image after another, row-major.
        pixels: Vec<u8>,
    },
    Labels {
        labels: Vec<u8>,
    },
}

impl IdxFile {
    /// Pixels of image `i`, row-major.
    pub fn image(&self, i: usize) -> Option<&[u8]> {
        match self {
            IdxFile::Images { count, rows, cols, pixels } if i < *count => {
                let len = rows * cols;
                Some(&pixels[i * len..(i + 1) * len])
            }
            _ => None,
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header: need {} bytes, file has {}", offset + 4, bytes.len())))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    let magic = read_u32(bytes, 0)?;
    match magic {
        IMAGE_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let rows = read_u32(bytes, 8)? as usize;
            let cols = read_u32(bytes, 12)? as usize;
            let need = count
                .checked_mul(rows)
                .and_then(|x| x.checked_mul(cols))
                .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
            let body = &bytes[16..];
            if body.len() < need {
                return Err(Error::Format(format!(
                    "truncated image data: header promises {need} bytes, found {}",
                    body.len()
                )));
            }
            Ok(IdxFile::Images { count, rows, cols, pixels: body[..need].to_vec() })
        }
        LABEL_MAGIC => {
            let count = read_u32(bytes, 4)? as usize;
            let body = &bytes[8..];
            if body.len() < count {
                return Err(Error::Format(format!(
                    "truncated label data: header promises {count} bytes, found {}",
                    body.len()
                )));
            }
            Ok(IdxFile::Labels { labels: body[..count].to_vec() })
        }
        other => Err(Error::Format(format!(
            "bad magic number {other:#010x} (expected {IMAGE_MAGIC:#010x} or {LABEL_MAGIC:#010x})"
        ))),
    }
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxFile> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes)
}

pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let len = rows * cols;
    if len == 0 || pixels.len() % len != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} pixels do not form whole {rows}x{cols} images",
            pixels.len()
        )));
    }
    let count = pixels.len() / len;
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
