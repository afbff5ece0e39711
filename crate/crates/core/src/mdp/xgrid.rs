//! Discretization of the accumulated-cost coordinate.

use super::FiniteHorizonMdp;
use crate::error::{Error, Result};

/// How accumulated costs are represented.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XMode {
    /// Every cost is an integer multiple of `1/k`; reachable sums are grid nodes, so the DP is exact.
    Lattice { k: u32 },
    /// Evenly spaced nodes with spacing at most `h`; values between nodes are linearly interpolated.
    Uniform { h: f64 },
}

/// Evenly spaced nodes `lo, lo + step, ...` of a single stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageNodes {
    lo: f64,
    step: f64,
    n: usize,
    denom: Option<f64>,
}

impl StageNodes {
    fn lattice(lo: f64, k: u32, n: usize) -> Self {
        Self {
            lo,
            step: 1.0 / k as f64,
            n,
            denom: Some(k as f64),
        }
    }

    fn uniform(lo: f64, hi: f64, h: f64) -> Self {
        let span = hi - lo;
        if span <= 0.0 {
            return Self {
                lo,
                step: h,
                n: 1,
                denom: None,
            };
        }
        let n = (span / h - 1e-9).ceil().max(1.0) as usize + 1;
        Self {
            lo,
            step: span / (n - 1) as f64,
            n,
            denom: None,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.x(self.n - 1)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn x(&self, j: usize) -> f64 {
        match self.denom {
            Some(k) => self.lo + j as f64 / k,
            None => self.lo + j as f64 * self.step,
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Index of the node at `x` if `x` lies on a node (within `1e-9` cells).
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let u = (x - self.lo) / self.step;
        let r = u.round();
        if (u - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.n {
            Some(r as usize)
        } else {
            None
        }
    }

    /// Piecewise-linear interpolation of node values, clamping `x` to the node range.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        if self.n == 1 {
            return values[0];
        }
        let u = ((x - self.lo) / self.step).clamp(0.0, (self.n - 1) as f64);
        self.blend(values, u)
    }

    /// Interpolation that extends the end segments linearly past the range.
    /// The flag reports whether `x` was outside the nodes.
    pub fn extrapolate(&self, values: &[f64], x: f64) -> (f64, bool) {
        let u = (x - self.lo) / self.step;
        let outside = u < -1e-9 || u > (self.n - 1) as f64 + 1e-9;
        if self.n == 1 {
            return (values[0], outside);
        }
        (self.blend(values, u), outside)
    }

    fn blend(&self, values: &[f64], u: f64) -> f64 {
        let r = u.round();
        if (u - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.n {
            return values[r as usize];
        }
        let i = (u.floor().max(0.0) as usize).min(self.n - 2);
        let w = u - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }
}

/// Per-stage node sets for stages `0..=T`.
///
/// Stage `t` spans `[lo, hi_0 + Σ_{τ<t} max c_τ]`, where `[lo, hi_0]` is the
/// stage-0 window (a single node at 0 for the plain problem).
#[derive(Debug, Clone, PartialEq)]
pub struct XGrid {
    mode: XMode,
    stages: Vec<StageNodes>,
    lattice_steps: Option<Vec<Vec<Vec<usize>>>>,
}

impl XGrid {
    pub fn for_mdp(mode: XMode, mdp: &FiniteHorizonMdp) -> Result<Self> {
        Self::with_window(mode, mdp, 0.0, 0.0)
    }

    /// Grid whose stage-0 nodes cover `[lo, hi]`; later stages share the origin `lo`.
    pub fn with_window(mode: XMode, mdp: &FiniteHorizonMdp, lo: f64, hi: f64) -> Result<Self> {
        Self::from_costs(mode, mdp.costs(), lo, hi)
    }

    /// Grid for an arbitrary stage cost table `costs[t][s][a]` (stages `0..=T`).
    pub fn from_costs(mode: XMode, costs: &[Vec<Vec<f64>>], lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("x window [{lo}, {hi}] is invalid")));
        }
        if costs.is_empty() {
            return Err(Error::Config("cost table has no stages".into()));
        }
        let horizon = costs.len() - 1;
        let mut stages = Vec::with_capacity(horizon + 1);
        let mut lattice_steps = None;
        match mode {
            XMode::Lattice { k } => {
                if k == 0 {
                    return Err(Error::Config("lattice denominator must be positive".into()));
                }
                let steps = lattice_cost_steps(costs, k as f64)?;
                // The window is widened upward to a whole number of lattice cells.
                let mut width = ((hi - lo) * k as f64 - 1e-9).ceil().max(0.0) as usize;
                for stage_steps in steps.iter() {
                    stages.push(StageNodes::lattice(lo, k, width + 1));
                    width += stage_steps.iter().flatten().copied().max().unwrap_or(0);
                }
                lattice_steps = Some(steps);
            }
            XMode::Uniform { h } => {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::Config(format!("uniform spacing {h} must be positive")));
                }
                let mut reach = 0.0;
                for stage in costs {
                    stages.push(StageNodes::uniform(lo, hi + reach, h));
                    reach += stage_max(stage);
                }
            }
        }
        Ok(Self {
            mode,
            stages,
            lattice_steps,
        })
    }

    pub fn mode(&self) -> XMode {
        self.mode
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.mode, XMode::Lattice { .. })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn stage(&self, t: usize) -> &StageNodes {
        &self.stages[t]
    }

    /// Lattice increment `c_t(s, a)·K` (lattice mode only).
    pub fn cost_steps(&self, t: usize, s: usize, a: usize) -> Option<usize> {
        self.lattice_steps.as_ref().map(|k| k[t][s][a])
    }

    /// Checks that the grid was built for a model with this shape and cost pattern.
    pub fn check_compatible(&self, mdp: &FiniteHorizonMdp) -> Result<()> {
        self.check_costs(mdp.costs())
    }

    pub fn check_costs(&self, costs: &[Vec<Vec<f64>>]) -> Result<()> {
        if self.stages.len() != costs.len() {
            return Err(Error::Config(format!(
                "x grid covers {} stages, model has {}",
                self.stages.len(),
                costs.len()
            )));
        }
        if let (XMode::Lattice { k }, Some(steps)) = (self.mode, &self.lattice_steps) {
            let fresh = lattice_cost_steps(costs, k as f64)?;
            if &fresh != steps {
                return Err(Error::Config("x grid was built for different costs".into()));
            }
        } else {
            for t in 0..costs.len() - 1 {
                let need = self.stages[t].hi() + stage_max(&costs[t]);
                if need > self.stages[t + 1].hi() + 1e-9 {
                    return Err(Error::Config(format!(
                        "x grid stage {} ends at {}, below the reachable {need}",
                        t + 1,
                        self.stages[t + 1].hi()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn stage_max(stage: &[Vec<f64>]) -> f64 {
    stage.iter().flatten().copied().fold(0.0, f64::max)
}

fn lattice_count(v: f64) -> Option<usize> {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) && r >= 0.0 {
        Some(r as usize)
    } else {
        None
    }
}

fn lattice_cost_steps(costs: &[Vec<Vec<f64>>], k: f64) -> Result<Vec<Vec<Vec<usize>>>> {
    costs
        .iter()
        .enumerate()
        .map(|(t, stage)| {
            stage
                .iter()
                .enumerate()
                .map(|(s, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(a, &c)| {
                            lattice_count(c * k).ok_or_else(|| {
                                Error::Config(format!(
                                    "cost c_{t}({s}, {a}) = {c} is not a multiple of 1/{k}"
                                ))
                            })
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}
