//! Grids over the parameter box and minimization of `θ ↦ E[f_θ(X)]`.

use super::{DiscreteDist, RiskFamily, ThetaBox};
use crate::error::{Error, Result};
use crate::search::golden_section_min;

pub const DEFAULT_POINTS_PER_AXIS: usize = 129;

/// Tensor-product grid over Θ; points are enumerated with the first axis varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    axes: Vec<Vec<f64>>,
}

impl ThetaGrid {
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::Config("θ grid is empty".into()));
        }
        for axis in &axes {
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("θ grid contains non-finite values".into()));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("θ grid axes must be strictly increasing".into()));
            }
        }
        Ok(Self { axes })
    }

    /// `n` evenly spaced points per axis, endpoints included.
    pub fn uniform(theta_box: &ThetaBox, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("θ grid needs at least one point per axis".into()));
        }
        let axes = theta_box
            .lo
            .iter()
            .zip(&theta_box.hi)
            .map(|(&lo, &hi)| {
                if n == 1 || hi == lo {
                    vec![lo]
                } else {
                    (0..n)
                        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                        .collect()
                }
            })
            .collect();
        Self::from_axes(axes)
    }

    /// Points `lo, lo + step, ...` up to `hi` on every axis (the upper end is always included).
    pub fn with_step(theta_box: &ThetaBox, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Config(format!("θ grid step {step} must be positive")));
        }
        let axes = theta_box
            .lo
            .iter()
            .zip(&theta_box.hi)
            .map(|(&lo, &hi)| {
                let count = ((hi - lo) / step + 1e-9).floor() as usize;
                let mut axis: Vec<f64> = (0..=count).map(|i| lo + step * i as f64).collect();
                if hi - axis[axis.len() - 1] > 1e-9 * step.max(1.0) {
                    axis.push(hi);
                } else {
                    let last = axis.len() - 1;
                    axis[last] = hi;
                }
                axis
            })
            .collect();
        Self::from_axes(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest spacing between consecutive points on any axis (0 for single-point grids).
    pub fn step(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = axis[index % axis.len()];
            index /= axis.len();
        }
        out
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            out[k] = index % axis.len();
            index /= axis.len();
        }
        out
    }

    pub fn contained_in(&self, theta_box: &ThetaBox) -> bool {
        self.axes.len() == theta_box.lo.len()
            && self.axes.iter().enumerate().all(|(k, axis)| {
                axis.iter()
                    .all(|&v| v >= theta_box.lo[k] - 1e-12 && v <= theta_box.hi[k] + 1e-12)
            })
    }
}

/// `min_θ E[f_θ(X)]` over the grid, followed by golden-section refinement.
///
/// One-dimensional families refine inside the bracket formed by the grid
/// neighbours of the best point. Two-dimensional families refine by nested
/// golden sections over the whole box (outer axis 0, inner axis 1); the
/// profile of a jointly convex function stays convex, so both searches are
/// unimodal. A refined point replaces the grid point only if it is better.
pub fn risk_of_distribution(
    family: &RiskFamily,
    dist: &DiscreteDist,
    grid: &ThetaGrid,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Config("θ grid is empty".into()));
    }
    if grid.dim() != family.theta_dim() {
        return Err(Error::Config(format!(
            "θ grid has dimension {}, family expects {}",
            grid.dim(),
            family.theta_dim()
        )));
    }
    if !grid.contained_in(family.theta_box()) {
        return Err(Error::Domain("θ grid leaves the parameter box".into()));
    }
    let objective = |theta: &[f64]| dist.expect(|z| family.eval_unchecked(theta, z));

    let (best_index, mut best_value) = grid_minimum(grid, &objective)?;
    let mut best_theta = grid.point(best_index);
    let b = family.theta_box();

    match grid.dim() {
        1 => {
            let idx = grid.multi_index(best_index)[0];
            let axis = &grid.axes()[0];
            let lo = if idx > 0 { axis[idx - 1] } else { b.lo[0] };
            let hi = if idx + 1 < axis.len() { axis[idx + 1] } else { b.hi[0] };
            let (t, v) = golden_section_min(|t| objective(&[t]), lo, hi, 1e-12, 300);
            if v < best_value {
                best_value = v;
                best_theta = vec![t];
            }
        }
        2 => {
            let inner = |lambda: f64| {
                golden_section_min(|mu| objective(&[lambda, mu]), b.lo[1], b.hi[1], 1e-11, 200)
            };
            let (lambda, v) = golden_section_min(|l| inner(l).1, b.lo[0], b.hi[0], 1e-11, 200);
            if v < best_value {
                let (mu, v2) = inner(lambda);
                if v2 < best_value {
                    best_value = v2;
                    best_theta = vec![lambda, mu];
                }
            }
        }
        _ => {}
    }
    Ok((best_value, best_theta))
}

/// Grid minimum only; ties resolve to the lowest enumeration index.
pub fn risk_on_grid(
    family: &RiskFamily,
    dist: &DiscreteDist,
    grid: &ThetaGrid,
) -> Result<(f64, Vec<f64>)> {
    if grid.dim() != family.theta_dim() {
        return Err(Error::Config("θ grid dimension mismatch".into()));
    }
    let objective = |theta: &[f64]| dist.expect(|z| family.eval_unchecked(theta, z));
    let (i, v) = grid_minimum(grid, &objective)?;
    Ok((v, grid.point(i)))
}

fn grid_minimum<F: Fn(&[f64]) -> f64>(grid: &ThetaGrid, objective: &F) -> Result<(usize, f64)> {
    let mut best = (usize::MAX, f64::INFINITY);
    for i in 0..grid.len() {
        let v = objective(&grid.point(i));
        if v.is_nan() {
            return Err(Error::Numeric {
                stage: 0,
                state: 0,
                detail: format!("objective is NaN at θ = {:?}", grid.point(i)),
            });
        }
        if v < best.1 {
            best = (i, v);
        }
    }
    if best.0 == usize::MAX {
        return Err(Error::Numeric {
            stage: 0,
            state: 0,
            detail: "objective is infinite on the whole θ grid".into(),
        });
    }
    Ok(best)
}
