//! Dual solvers for the binary soft-margin SVM and the minimum enclosing ball.
//!
//! Both reduce to the same box- and equality-constrained quadratic program
//!
//! ```text
//! min  ½ αᵀQα + pᵀα    s.t.  yᵀα = Δ,  0 ≤ αᵢ ≤ Cᵢ
//! ```
//!
//! which is solved by sequential pairwise updates with second-order
//! working-pair selection (maximal violating `i`, then the `j` with the
//! largest guaranteed objective decrease). Iteration stops once the maximal
//! KKT violation drops below `tol`.

use std::collections::VecDeque;
use std::rc::Rc;

use super::kernel::KernelSpec;
use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 256 << 20;

/// Solver iteration cap per training point.
pub const ITERATIONS_PER_POINT: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-3;

/// Lazily computed rows of `Q_ij = factor · yᵢ yⱼ K(xᵢ, xⱼ)` with a bounded FIFO cache.
struct QMatrix<'a> {
    points: &'a [&'a [f64]],
    y: &'a [f64],
    kernel: KernelSpec,
    factor: f64,
    diag: Vec<f64>,
    rows: Vec<Option<Rc<Vec<f64>>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> QMatrix<'a> {
    fn new(points: &'a [&'a [f64]], y: &'a [f64], kernel: KernelSpec, factor: f64) -> Self {
        let n = points.len();
        let diag = points.iter().map(|x| factor * kernel.apply(x, x)).collect();
        let capacity = (CACHE_BYTES / (n.max(1) * 8)).clamp(2, n.max(2));
        Self {
            points,
            y,
            kernel,
            factor,
            diag,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        if let Some(r) = &self.rows[i] {
            return Rc::clone(r);
        }
        let xi = self.points[i];
        let yi = self.y[i];
        let row: Vec<f64> = self
            .points
            .iter()
            .zip(self.y)
            .map(|(xj, yj)| self.factor * yi * yj * self.kernel.apply(xi, xj))
            .collect();
        let row = Rc::new(row);
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        self.rows[i] = Some(Rc::clone(&row));
        self.order.push_back(i);
        row
    }
}

struct Solution {
    alpha: Vec<f64>,
    gradient: Vec<f64>,
    rho: f64,
    iterations: usize,
    converged: bool,
}

fn solve(
    q: &mut QMatrix<'_>,
    p: &[f64],
    y: &[f64],
    upper: &[f64],
    mut alpha: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Solution {
    let n = p.len();
    let mut grad = p.to_vec();
    for i in 0..n {
        if alpha[i] != 0.0 {
            let qi = q.row(i);
            for k in 0..n {
                grad[k] += alpha[i] * qi[k];
            }
        }
    }

    let at_upper = |a: &[f64], t: usize| a[t] >= upper[t];
    let at_lower = |a: &[f64], t: usize| a[t] <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // i: maximal violator in the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                (!at_upper(&alpha, t)).then(|| -grad[t])
            } else {
                (!at_lower(&alpha, t)).then_some(grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let qi = q.row(i);

        // j: second-order choice among the "low" set
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let (violation, grad_diff, quad) = if y[t] > 0.0 {
                if at_lower(&alpha, t) {
                    continue;
                }
                (
                    grad[t],
                    gmax + grad[t],
                    q.diag[i] + q.diag[t] - 2.0 * y[i] * qi[t],
                )
            } else {
                if at_upper(&alpha, t) {
                    continue;
                }
                (
                    -grad[t],
                    gmax - grad[t],
                    q.diag[i] + q.diag[t] + 2.0 * y[i] * qi[t],
                )
            };
            if violation >= gmax2 {
                gmax2 = violation;
            }
            if grad_diff > 0.0 {
                let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < tol {
            converged = true;
            break;
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let qj = q.row(j);
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q.diag[i] + q.diag[j] + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (q.diag[i] + q.diag[j] - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for k in 0..n {
            grad[k] += qi[k] * di + qj[k] * dj;
        }
    }

    let rho = compute_rho(&alpha, &grad, y, upper);
    Solution {
        alpha,
        gradient: grad,
        rho,
        iterations,
        converged,
    }
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], upper: &[f64]) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free = 0usize;
    let mut sum_free = 0.0;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

/// A trained two-class kernel machine: `g(x) = Σ coefᵢ K(svᵢ, x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub kernel: KernelSpec,
    pub support: Vec<Vec<f64>>,
    /// `αᵢ yᵢ` for each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * self.kernel.apply(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

/// Result of [`svm_train_binary`], including the full dual vector.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: BinarySvm,
    pub alpha: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Trains a soft-margin binary SVM. `labels` are `+1.0` / `-1.0`.
///
/// Hitting the iteration cap is not an error: the model is returned with
/// `converged == false` and a warning is logged.
pub fn svm_train_binary(
    points: &[&[f64]],
    labels: &[f64],
    c: f64,
    kernel: KernelSpec,
    tol: f64,
) -> Result<SvmFit> {
    if points.len() != labels.len() {
        return Err(Error::InvalidInput(
            "points and labels differ in length".into(),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("C must be positive, got {c}")));
    }
    kernel.validate()?;
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidInput("labels must be +1 or -1".into()));
    }
    if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
        return Err(Error::Degenerate("binary SVM needs both labels".into()));
    }
    if let Some(d) = points.first().map(|p| p.len()) {
        if let Some(bad) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: bad.len(),
            });
        }
    }

    let n = points.len();
    let mut q = QMatrix::new(points, labels, kernel, 1.0);
    let p = vec![-1.0; n];
    let upper = vec![c; n];
    let max_iter = ITERATIONS_PER_POINT.saturating_mul(n);
    let sol = solve(&mut q, &p, labels, &upper, vec![0.0; n], tol, max_iter);
    if !sol.converged {
        log::warn!("binary SVM stopped at the iteration cap ({max_iter})");
    }

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(points[i].to_vec());
            coef.push(a * labels[i]);
        }
    }
    Ok(SvmFit {
        model: BinarySvm {
            kernel,
            support,
            coef,
            bias: -sol.rho,
        },
        alpha: sol.alpha,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Minimum enclosing ball in kernel space with slack fraction `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnclosingBall {
    pub kernel: KernelSpec,
    pub support: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// `αᵀKα` over the support set.
    pub center_norm2: f64,
    pub radius: f64,
}

impl EnclosingBall {
    /// Squared kernel-space distance from `x` to the ball center.
    pub fn distance2(&self, x: &[f64]) -> f64 {
        let cross: f64 = self
            .support
            .iter()
            .zip(&self.alpha)
            .map(|(sv, a)| a * self.kernel.apply(sv, x))
            .sum();
        (self.kernel.apply(x, x) - 2.0 * cross + self.center_norm2).max(0.0)
    }

    /// `radius − distance`: nonnegative inside the ball.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.radius - self.distance2(x).sqrt()
    }
}

/// Fits the enclosing ball by solving
/// `min αᵀKα − Σ αᵢ Kᵢᵢ  s.t.  Σ αᵢ = 1, 0 ≤ αᵢ ≤ 1/(ν N)`.
///
/// At most a fraction `nu` of the points ends up outside the ball.
pub fn enclosing_ball_train(
    points: &[&[f64]],
    nu: f64,
    kernel: KernelSpec,
    tol: f64,
) -> Result<EnclosingBall> {
    if points.is_empty() {
        return Err(Error::Degenerate(
            "enclosing ball needs at least one point".into(),
        ));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "nu must be in (0, 1], got {nu}"
        )));
    }
    kernel.validate()?;
    let n = points.len();
    let c = (1.0 / (nu * n as f64)).min(1.0);

    // feasible start: fill the first points up to the box bound
    let mut alpha = vec![0.0; n];
    let mut remaining: f64 = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = remaining.min(c);
        remaining -= *a;
    }

    let y = vec![1.0; n];
    let mut q = QMatrix::new(points, &y, kernel, 2.0);
    let p: Vec<f64> = points.iter().map(|x| -kernel.apply(x, x)).collect();
    let upper = vec![c; n];
    let max_iter = ITERATIONS_PER_POINT.saturating_mul(n);
    let sol = solve(&mut q, &p, &y, &upper, alpha, tol, max_iter);
    if !sol.converged {
        log::warn!("enclosing ball stopped at the iteration cap ({max_iter})");
    }

    // G = 2Kα − diag(K), so αᵀKα = ½ Σ αᵢ (Gᵢ + Kᵢᵢ)
    let center_norm2: f64 = sol
        .alpha
        .iter()
        .zip(&sol.gradient)
        .zip(&p)
        .map(|((a, g), pi)| 0.5 * a * (g - pi))
        .sum();
    let radius = (center_norm2 - sol.rho).max(0.0).sqrt();

    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(points[i].to_vec());
            coef.push(a);
        }
    }
    Ok(EnclosingBall {
        kernel,
        support,
        alpha: coef,
        center_norm2,
        radius,
    })
}
