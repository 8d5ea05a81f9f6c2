use super::image::RgbImage;
use crate::error::{Error, Result};

const BLOCK: usize = 8;
const GREEN: usize = 1;

/// Square patch geometry. Selected patches never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub size: usize,
    pub count: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: 64,
            count: 32,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < BLOCK || self.count == 0 {
            return Err(Error::InvalidInput(format!(
                "patch size must be at least {BLOCK} and count at least 1, got {}x{}",
                self.size, self.count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Top-left corner in the source image.
    pub row: usize,
    pub col: usize,
    pub quality: f64,
    pub pixels: RgbImage,
}

/// Texture minus saturation on the green channel of one window.
///
/// Texture is the mean standard deviation over the window's full 8×8 blocks;
/// saturation is the fraction of pixels at 0 or 255.
pub fn quality_score(image: &RgbImage, row: usize, col: usize, size: usize) -> f64 {
    let blocks = size / BLOCK;
    let mut texture = 0.0;
    for by in 0..blocks {
        for bx in 0..blocks {
            let (mut sum, mut sum2) = (0.0, 0.0);
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    let v = f64::from(image.get(row + by * BLOCK + y, col + bx * BLOCK + x, GREEN));
                    sum += v;
                    sum2 += v * v;
                }
            }
            let n = (BLOCK * BLOCK) as f64;
            let mean = sum / n;
            texture += (sum2 / n - mean * mean).max(0.0).sqrt();
        }
    }
    texture /= (blocks * blocks) as f64;

    let mut saturated = 0usize;
    for y in row..row + size {
        for x in col..col + size {
            let v = image.get(y, x, GREEN);
            if v == 0 || v == u8::MAX {
                saturated += 1;
            }
        }
    }
    texture - saturated as f64 / (size * size) as f64
}

/// Picks the best `spec.count` tiles of the non-overlapping `size` grid,
/// ordered by descending quality; equal scores keep raster order.
pub fn extract_patches(image: &RgbImage, spec: &PatchSpec) -> Result<Vec<Patch>> {
    spec.validate()?;
    if image.height() < spec.size || image.width() < spec.size {
        return Err(Error::InvalidInput(format!(
            "{}x{} image is smaller than one {}-pixel patch",
            image.height(),
            image.width(),
            spec.size
        )));
    }
    let mut tiles = Vec::new();
    for ty in 0..image.height() / spec.size {
        for tx in 0..image.width() / spec.size {
            let (row, col) = (ty * spec.size, tx * spec.size);
            tiles.push((quality_score(image, row, col, spec.size), row, col));
        }
    }
    // stable sort keeps raster order among equal scores
    tiles.sort_by(|a, b| b.0.total_cmp(&a.0));
    tiles
        .into_iter()
        .take(spec.count)
        .map(|(quality, row, col)| {
            Ok(Patch {
                row,
                col,
                quality,
                pixels: image.crop(row, col, spec.size, spec.size)?,
            })
        })
        .collect()
}
