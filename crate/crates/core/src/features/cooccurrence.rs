use super::image::{Plane, RgbImage};
use crate::error::{Error, Result};

/// Integer-valued high-pass kernel, applied as a valid-region correlation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterKernel {
    rows: usize,
    cols: usize,
    taps: Vec<i32>,
}

impl FilterKernel {
    pub fn new(rows: usize, cols: usize, taps: Vec<i32>) -> Result<Self> {
        if rows == 0 || cols == 0 || taps.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "kernel of {rows}x{cols} needs {} taps, got {}",
                rows * cols,
                taps.len()
            )));
        }
        Ok(Self { rows, cols, taps })
    }

    pub fn horizontal(taps: &[i32]) -> Self {
        Self {
            rows: 1,
            cols: taps.len(),
            taps: taps.to_vec(),
        }
    }

    pub fn vertical(taps: &[i32]) -> Self {
        Self {
            rows: taps.len(),
            cols: 1,
            taps: taps.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tap(&self, y: usize, x: usize) -> i32 {
        self.taps[y * self.cols + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Quantized residual values, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntPlane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i32>,
}

impl IntPlane {
    pub fn get(&self, y: usize, x: usize) -> i32 {
        self.data[y * self.cols + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceConfig {
    pub filter_bank: Vec<FilterKernel>,
    /// Quantization step `q`.
    pub step: f64,
    /// Truncation `T`; residuals are clamped to `[-T, T]`.
    pub truncation: u32,
    /// Co-occurrence order `d`.
    pub order: usize,
    pub directions: Vec<Direction>,
    /// Histogram the R−G, B−G and R−B difference planes instead of green.
    pub cross_channel: bool,
}

impl Default for CooccurrenceConfig {
    fn default() -> Self {
        Self {
            filter_bank: vec![
                FilterKernel::horizontal(&[-1, 1]),
                FilterKernel::vertical(&[-1, 1]),
                FilterKernel::horizontal(&[1, -2, 1]),
                FilterKernel::vertical(&[1, -2, 1]),
            ],
            step: 1.0,
            truncation: 2,
            order: 3,
            directions: vec![Direction::Horizontal, Direction::Vertical],
            cross_channel: false,
        }
    }
}

impl CooccurrenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.filter_bank.is_empty() {
            return bad("empty filter bank".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!(
                "quantization step must be positive, got {}",
                self.step
            ));
        }
        if self.truncation == 0 {
            return bad("truncation must be at least 1".into());
        }
        if !(2..=4).contains(&self.order) {
            return bad(format!("order must be 2, 3 or 4, got {}", self.order));
        }
        if self.directions.is_empty() {
            return bad("no directions selected".into());
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        (2 * self.truncation as usize + 1).pow(self.order as u32)
    }

    pub fn output_dim(&self) -> usize {
        let groups = if self.cross_channel { 3 } else { 1 };
        groups * self.filter_bank.len() * self.directions.len() * self.bins()
    }
}

/// Valid-region correlation of `plane` with `kernel`.
pub fn residual(plane: &Plane, kernel: &FilterKernel) -> Result<Plane> {
    if kernel.rows > plane.rows() || kernel.cols > plane.cols() {
        return Err(Error::InvalidInput(format!(
            "{}x{} kernel does not fit a {}x{} patch",
            kernel.rows,
            kernel.cols,
            plane.rows(),
            plane.cols()
        )));
    }
    let rows = plane.rows() - kernel.rows + 1;
    let cols = plane.cols() - kernel.cols + 1;
    Ok(Plane::from_fn(rows, cols, |y, x| {
        let mut acc = 0.0;
        for ky in 0..kernel.rows {
            for kx in 0..kernel.cols {
                acc += f64::from(kernel.tap(ky, kx)) * plane.get(y + ky, x + kx);
            }
        }
        acc
    }))
}

/// `clamp(round(r / q), -T, T)` with halves rounded away from zero.
pub fn quantize_truncate(residual: &Plane, step: f64, truncation: u32) -> IntPlane {
    let t = f64::from(truncation);
    IntPlane {
        rows: residual.rows(),
        cols: residual.cols(),
        data: residual
            .data()
            .iter()
            .map(|&r| (r / step).round().clamp(-t, t) as i32)
            .collect(),
    }
}

/// Normalized histogram of length-`order` runs along `direction`.
///
/// A tuple `(v₀, …, v_{d−1})` lands in bin `Σ (vₖ + T)(2T+1)^(d−1−k)`, so the
/// first element is the most significant digit. Values outside `[-T, T]`
/// are clamped. Returns all zeros when no run fits.
pub fn cooccurrence_histogram(
    quantized: &IntPlane,
    truncation: u32,
    order: usize,
    direction: Direction,
) -> Vec<f64> {
    let t = truncation as i32;
    let base = 2 * truncation as usize + 1;
    let mut hist = vec![0.0; base.pow(order as u32)];
    let (dy, dx) = match direction {
        Direction::Horizontal => (0, 1),
        Direction::Vertical => (1, 0),
    };
    let span = order.saturating_sub(1);
    if order == 0 || quantized.rows < 1 + dy * span || quantized.cols < 1 + dx * span {
        return hist;
    }
    let mut total = 0usize;
    for y in 0..quantized.rows - dy * span {
        for x in 0..quantized.cols - dx * span {
            let mut bin = 0;
            for k in 0..order {
                let v = quantized.get(y + dy * k, x + dx * k).clamp(-t, t);
                bin = bin * base + (v + t) as usize;
            }
            hist[bin] += 1.0;
            total += 1;
        }
    }
    let total = total as f64;
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}

/// Concatenated histograms, ordered plane, then filter, then direction.
pub fn extract_features(patch: &RgbImage, config: &CooccurrenceConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let planes = if config.cross_channel {
        vec![
            patch.difference(0, 1),
            patch.difference(2, 1),
            patch.difference(0, 2),
        ]
    } else {
        vec![patch.channel(1)]
    };
    let span = config.order - 1;
    let mut out = Vec::with_capacity(config.output_dim());
    for plane in &planes {
        for kernel in &config.filter_bank {
            let res = residual(plane, kernel)?;
            let q = quantize_truncate(&res, config.step, config.truncation);
            for &dir in &config.directions {
                let fits = match dir {
                    Direction::Horizontal => q.cols > span,
                    Direction::Vertical => q.rows > span,
                };
                if !fits {
                    return Err(Error::InvalidInput(format!(
                        "{}x{} patch too small for order {} after filtering",
                        patch.height(),
                        patch.width(),
                        config.order
                    )));
                }
                out.extend(cooccurrence_histogram(
                    &q,
                    config.truncation,
                    config.order,
                    dir,
                ));
            }
        }
    }
    Ok(out)
}
