//! Binary PGM (P5) image grids.

use std::fs;
use std::path::Path;

use super::FormatError;
use crate::error::{Error, Result};

/// A grayscale image with real-valued pixels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Dimension { expected: height * width, got: pixels.len() });
        }
        Ok(Self { height, width, pixels })
    }
}

/// Images to tile, with the value range mapped to black and white.
pub struct ImageGrid<'a> {
    pub images: &'a [GrayImage],
    pub columns: usize,
    /// `(black, white)`; values outside are clamped.
    pub value_range: (f64, f64),
}

fn to_byte(v: f64, (lo, hi): (f64, f64)) -> u8 {
    let t = ((v - lo) / (hi - lo) * 255.0).round();
    if t.is_nan() {
        0
    } else {
        t.clamp(0.0, 255.0) as u8
    }
}

impl ImageGrid<'_> {
    /// Tiles the images row-major with 1-pixel black separators.
    pub fn render(&self) -> Result<GrayBytes> {
        let first = self.images.first().ok_or_else(|| Error::InvalidArgument("no images to write".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = self.images.iter().find(|im| im.height != h || im.width != w) {
            return Err(Error::InvalidArgument(format!(
                "image of size {}x{} in a grid of {h}x{w} images",
                bad.height, bad.width
            )));
        }
        let (lo, hi) = self.value_range;
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty value range [{lo}, {hi}]")));
        }
        let cols = self.columns.clamp(1, self.images.len());
        let rows = self.images.len().div_ceil(cols);
        let width = cols * w + cols - 1;
        let height = rows * h + rows - 1;
        let mut data = vec![0u8; width * height];
        for (k, im) in self.images.iter().enumerate() {
            let (r0, c0) = ((k / cols) * (h + 1), (k % cols) * (w + 1));
            for i in 0..h {
                for j in 0..w {
                    data[(r0 + i) * width + c0 + j] = to_byte(im.pixels[i * w + j], self.value_range);
                }
            }
        }
        Ok(GrayBytes { height, width, data })
    }
}

/// An 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayBytes {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayBytes {
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

pub fn write_pgm_grid(grid: &ImageGrid<'_>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, grid.render()?.encode_pgm())?;
    Ok(())
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Invalid("malformed PGM header".into()).into())
}

/// Reads a binary PGM with pixel values scaled to [0, 1].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(FormatError::BadMagic { what: "PGM image", expected: "P5".into(), found }.into());
    }
    let mut pos = 2;
    let width = header_token(&bytes, &mut pos)?;
    let height = header_token(&bytes, &mut pos)?;
    let maxval = header_token(&bytes, &mut pos)?;
    if !(1..=255).contains(&maxval) {
        return Err(FormatError::Invalid(format!("unsupported PGM maxval {maxval}")).into());
    }
    pos += 1;
    let need = pos + width * height;
    if bytes.len() < need {
        return Err(
            FormatError::Truncated { what: "PGM image", expected: need as u64, found: bytes.len() as u64 }.into()
        );
    }
    let pixels = bytes[pos..need].iter().map(|&b| b as f64 / maxval as f64).collect();
    GrayImage::new(height, width, pixels)
}
