use std::fs;
use std::path::Path;

use super::TrainedModel;
use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub label: Label,
}

fn axis(lo: f64, hi: f64, i: usize, resolution: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (resolution - 1) as f64
}

/// Predictions over a `resolution × resolution` scan of the plane spanned by
/// raw feature dimensions `dims`, every other coordinate fixed at the
/// training mean. Rows run along `y`, cells within a row along `x`.
pub fn export_decision_grid(
    model: &TrainedModel,
    dims: (usize, usize),
    bounds: GridBounds,
    resolution: usize,
) -> Result<Vec<GridCell>> {
    let d = model.feature_dim();
    let (i, j) = dims;
    if i >= d || j >= d || i == j {
        return Err(Error::InvalidInput(format!(
            "grid dimensions ({i}, {j}) must be distinct and below {d}"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidInput(
            "grid resolution must be at least 2".into(),
        ));
    }
    let mut point = model.train_mean().to_vec();
    let mut cells = Vec::with_capacity(resolution * resolution);
    for iy in 0..resolution {
        let y = axis(bounds.y.0, bounds.y.1, iy, resolution);
        for ix in 0..resolution {
            let x = axis(bounds.x.0, bounds.x.1, ix, resolution);
            point[i] = x;
            point[j] = y;
            cells.push(GridCell {
                x,
                y,
                label: model.predict(&point)?,
            });
        }
    }
    Ok(cells)
}

/// Writes cells as CSV `x,y,label` with class names.
pub fn write_decision_grid(cells: &[GridCell], model: &TrainedModel, path: &Path) -> Result<()> {
    let mut out = String::from("x,y,label\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{}\n",
            c.x,
            c.y,
            model.registry().label_name(c.label)?
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
