use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const OSIM_MAGIC: &[u8; 4] = b"OSIM";

/// An 8-bit RGB image, row-major and channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::DimensionMismatch {
                expected: height * width * 3,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, channel: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + channel]
    }

    /// Copies the `h × w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<RgbImage> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(RgbImage::from_fn(h, w, |r, c, ch| {
            self.get(y + r, x + c, ch)
        }))
    }

    pub fn channel(&self, channel: usize) -> Plane {
        Plane::from_fn(self.height, self.width, |y, x| {
            f64::from(self.get(y, x, channel))
        })
    }

    /// Difference plane `channel a − channel b`.
    pub fn difference(&self, a: usize, b: usize) -> Plane {
        Plane::from_fn(self.height, self.width, |y, x| {
            f64::from(self.get(y, x, a)) - f64::from(self.get(y, x, b))
        })
    }
}

/// A 2-D real array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for y in 0..rows {
            for x in 0..cols {
                data.push(f(y, x));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.cols + x]
    }
}

/// Reads an `OSIM` raw dump: magic, `u32` height, width and channels (3),
/// then `u8` pixels.
pub fn read_osim(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 16 || &bytes[..4] != OSIM_MAGIC {
        return Err(Error::format(ctx, "missing OSIM header"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice")) as usize;
    let (height, width, channels) = (word(4), word(8), word(12));
    if channels != 3 {
        return Err(Error::format(
            ctx,
            format!("expected 3 channels, found {channels}"),
        ));
    }
    let body = &bytes[16..];
    if body.len() != height * width * 3 {
        return Err(Error::format(
            ctx,
            format!(
                "{height}x{width} image needs {} bytes, found {}",
                height * width * 3,
                body.len()
            ),
        ));
    }
    RgbImage::new(height, width, body.to_vec())
}

pub fn write_osim(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = Vec::with_capacity(16 + image.pixels.len());
    out.extend_from_slice(OSIM_MAGIC);
    for v in [image.height, image.width, 3] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&image.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
