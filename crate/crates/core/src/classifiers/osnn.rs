use super::FitSet;

/// Lazy nearest-neighbor learner with distance-ratio rejection.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Osnn {
    pub points: Vec<Vec<f64>>,
    pub slots: Vec<usize>,
    pub n_slots: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Osnn {
    pub fn fit(set: &FitSet) -> Self {
        Self {
            points: set.xs.clone(),
            slots: set.slots.clone(),
            n_slots: set.n_slots,
        }
    }

    /// `d(f, t) / d(f, v)` for the nearest sample `t` and the nearest sample
    /// `v` of another class, with the slot of `t`. Equal distances give 1.
    pub fn ratio(&self, x: &[f64]) -> (usize, f64) {
        let mut nearest = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = dist2(p, x);
            if d < nearest.1 {
                nearest = (i, d);
            }
        }
        let slot = self.slots[nearest.0];
        let other = self
            .points
            .iter()
            .zip(&self.slots)
            .filter(|(_, &s)| s != slot)
            .map(|(p, _)| dist2(p, x))
            .fold(f64::INFINITY, f64::min);
        let (dt, dv) = (nearest.1.sqrt(), other.sqrt());
        let ratio = if dt >= dv { 1.0 } else { dt / dv };
        (slot, ratio)
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let (slot, ratio) = self.ratio(x);
        let mut out = vec![0.0; self.n_slots];
        out[slot] = 1.0 - ratio;
        out
    }
}
