//! IDX files (the MNIST distribution format): big-endian header, raw
//! unsigned bytes.

use std::fs;
use std::path::Path;

use super::FormatError;
use crate::error::Result;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Images with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawMnist {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl RawMnist {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixel `i` of every image scaled to [0, 1].
    pub fn unit_pixels(&self, i: usize) -> Vec<f64> {
        self.images.image(i).iter().map(|&p| p as f64 / 255.0).collect()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or(FormatError::Truncated {
        what,
        expected: at as u64 + 4,
        found: bytes.len() as u64,
    })?;
    Ok(u32::from_be_bytes(b.try_into().unwrap()))
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(FormatError::BadMagic { what, expected: expected.to_string(), found: found.to_string() }.into());
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &'static str) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(FormatError::Truncated { what, expected: expected as u64, found: bytes.len() as u64 }.into());
    }
    Ok(&bytes[header..expected])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    const WHAT: &str = "IDX image file";
    check_magic(bytes, IMAGES_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    let rows = be_u32(bytes, 8, WHAT)? as usize;
    let cols = be_u32(bytes, 12, WHAT)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, WHAT)?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    const WHAT: &str = "IDX label file";
    check_magic(bytes, LABELS_MAGIC, WHAT)?;
    let count = be_u32(bytes, 4, WHAT)? as usize;
    Ok(payload(bytes, 8, count, WHAT)?.to_vec())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_images(&fs::read(path)?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_labels(&fs::read(path)?)
}

/// Reads an image file and its label file.
pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<RawMnist> {
    let images = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    if images.count != labels.len() {
        return Err(FormatError::CountMismatch { images: images.count, labels: labels.len() }.into());
    }
    Ok(RawMnist { images, labels })
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes an image/label file pair.
pub fn write_idx(raw: &RawMnist, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    fs::write(images, encode_images(&raw.images))?;
    fs::write(labels, encode_labels(&raw.labels))?;
    Ok(())
}
