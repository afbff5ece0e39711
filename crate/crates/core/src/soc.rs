//! Finite-horizon risk-averse stochastic optimal control on grids.
//!
//! States and actions live in compact boxes; the next state is `F_t(s, a, ξ)`
//! for a finite scenario set `ξ`. The augmented DP runs on a tensor grid of
//! states (multilinear interpolation), a grid of actions (exhaustive search),
//! and an x-grid for the accumulated cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{opt_modulus, eval_modulus, AugPolicy, Decision, FiniteHorizonMdp, ValueTable, XGrid, XMode};
use crate::risk::{RiskFamily, ThetaGrid};

/// Axis-aligned compact box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Config("box bounds have mismatched lengths".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::Config("box bounds are invalid".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64], tol: f64) -> bool {
        p.len() == self.dim()
            && p.iter()
                .enumerate()
                .all(|(k, &v)| v >= self.lo[k] - tol && v <= self.hi[k] + tol)
    }

    pub fn clamp(&self, p: &mut [f64]) {
        for (k, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lo[k], self.hi[k]);
        }
    }

    /// Euclidean norm of the farthest corner from the origin.
    pub fn radius(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
            .collect()
    }
}

/// Transition map `F_t(s, a, ξ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// `s' = A s + B a + ξ`, optionally clamped to the state box.
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        clamp: bool,
    },
    /// Next states on grid nodes: `next[t][state node][action node][scenario]`.
    Tabulated { next: Vec<Vec<Vec<Vec<Vec<f64>>>>> },
}

/// Stage cost `c_t(s, a) ∈ [0, 1]` before per-stage scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum SocCost {
    Constant(f64),
    /// `min(1, Σ q_s,i s_i² + Σ q_a,i a_i²)`.
    Quadratic { q_s: Vec<f64>, q_a: Vec<f64> },
    /// Costs on grid nodes: `values[t][state node][action node]`.
    Tabulated { values: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub xi: Vec<f64>,
    pub p: f64,
}

/// Finite-horizon stochastic optimal control problem over stages `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocProblem {
    pub horizon: usize,
    pub state_box: BoxDomain,
    pub action_box: BoxDomain,
    pub dynamics: Dynamics,
    pub cost: SocCost,
    /// Scenario sets for stages `0..T`.
    pub noise: Vec<Vec<Scenario>>,
    /// Multiplier of the stage-`t` cost (`γ^t` for discounted truncations).
    pub cost_scale: Vec<f64>,
    /// Joint Lipschitz constant of `c_t` and `F_t` in `(s, a)`.
    pub lipschitz: f64,
}

impl SocProblem {
    /// Checks shapes, scenario probabilities and cost ranges.
    pub fn validate(&self) -> Result<()> {
        let ds = self.state_box.dim();
        let da = self.action_box.dim();
        if self.noise.len() != self.horizon {
            return Err(Error::Config(format!(
                "expected {} scenario sets, found {}",
                self.horizon,
                self.noise.len()
            )));
        }
        if self.cost_scale.len() != self.horizon + 1 || self.cost_scale.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(Error::Config("cost scales must be in [0, 1] for every stage".into()));
        }
        for (t, set) in self.noise.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("stage {t} has no scenarios")));
            }
            let total: f64 = set.iter().map(|sc| sc.p).sum();
            if set.iter().any(|sc| !(sc.p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Input(format!("stage {t} scenario probabilities sum to {total}")));
            }
            if let Dynamics::Linear { .. } = self.dynamics {
                if set.iter().any(|sc| sc.xi.len() != ds) {
                    return Err(Error::Config(format!("stage {t} noise has the wrong dimension")));
                }
            }
        }
        match &self.dynamics {
            Dynamics::Linear { a, b, .. } => {
                if a.len() != ds || a.iter().any(|r| r.len() != ds) {
                    return Err(Error::Config("dynamics matrix A must be d_S × d_S".into()));
                }
                if b.len() != ds || b.iter().any(|r| r.len() != da) {
                    return Err(Error::Config("dynamics matrix B must be d_S × d_A".into()));
                }
            }
            Dynamics::Tabulated { next } => {
                if next.len() != self.horizon {
                    return Err(Error::Config("tabulated dynamics must cover stages 0..T".into()));
                }
            }
        }
        match &self.cost {
            SocCost::Constant(c) if !(0.0..=1.0).contains(c) => {
                return Err(Error::Input(format!("constant cost {c} lies outside [0, 1]")))
            }
            SocCost::Quadratic { q_s, q_a } => {
                if q_s.len() != ds || q_a.len() != da || q_s.iter().chain(q_a).any(|q| !(*q >= 0.0)) {
                    return Err(Error::Config("quadratic cost weights are invalid".into()));
                }
            }
            SocCost::Tabulated { values } => {
                if values.len() != self.horizon + 1 {
                    return Err(Error::Config("tabulated costs must cover stages 0..=T".into()));
                }
                if values.iter().flatten().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::Input("tabulated costs must lie in [0, 1]".into()));
                }
            }
            _ => {}
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::Config(format!("Lipschitz constant {} is invalid", self.lipschitz)));
        }
        Ok(())
    }

    fn base_cost(&self, t: usize, si: usize, s: &[f64], ai: usize, a: &[f64]) -> f64 {
        match &self.cost {
            SocCost::Constant(c) => *c,
            SocCost::Quadratic { q_s, q_a } => {
                let v: f64 = q_s.iter().zip(s).map(|(q, x)| q * x * x).sum::<f64>()
                    + q_a.iter().zip(a).map(|(q, x)| q * x * x).sum::<f64>();
                v.min(1.0)
            }
            SocCost::Tabulated { values } => values[t][si][ai],
        }
    }

    /// Raw `F_t` without the box check (clamping applied if requested).
    fn raw_next(&self, t: usize, si: usize, s: &[f64], ai: usize, a: &[f64], k: usize) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Linear { a: ma, b: mb, clamp } => {
                let xi = &self.noise[t][k].xi;
                let mut out: Vec<f64> = (0..s.len())
                    .map(|r| {
                        ma[r].iter().zip(s).map(|(m, v)| m * v).sum::<f64>()
                            + mb[r].iter().zip(a).map(|(m, v)| m * v).sum::<f64>()
                            + xi[r]
                    })
                    .collect();
                if *clamp {
                    self.state_box.clamp(&mut out);
                }
                out
            }
            Dynamics::Tabulated { next } => next[t][si][ai][k].clone(),
        }
    }

    fn next_state(&self, t: usize, si: usize, s: &[f64], ai: usize, a: &[f64], k: usize) -> Result<Vec<f64>> {
        let out = self.raw_next(t, si, s, ai, a, k);
        if !self.state_box.contains(&out, 1e-9) {
            return Err(Error::Dynamics {
                stage: t,
                state: s.to_vec(),
                action: a.to_vec(),
                noise: match &self.dynamics {
                    Dynamics::Linear { .. } => self.noise[t][k].xi.clone(),
                    Dynamics::Tabulated { .. } => vec![k as f64],
                },
            });
        }
        let mut out = out;
        self.state_box.clamp(&mut out);
        Ok(out)
    }

    /// Largest finite-difference slope of `c_t` and `F_t` in `(s, a)`.
    ///
    /// Analytic parts are probed on random pairs (near and far); tabulated parts on
    /// adjacent grid nodes.
    fn observed_lipschitz(&self, grid: &SocGrid) -> f64 {
        let mut worst: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0x11b5);
        let analytic_cost = !matches!(self.cost, SocCost::Tabulated { .. });
        let analytic_dyn = matches!(self.dynamics, Dynamics::Linear { .. });
        if analytic_cost || analytic_dyn {
            for sample in 0..2000 {
                let s = self.state_box.sample(&mut rng);
                let a = self.action_box.sample(&mut rng);
                let (s2, a2) = if sample % 2 == 0 {
                    (self.state_box.sample(&mut rng), self.action_box.sample(&mut rng))
                } else {
                    let mut s2: Vec<f64> = s.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
                    let mut a2: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
                    self.state_box.clamp(&mut s2);
                    self.action_box.clamp(&mut a2);
                    (s2, a2)
                };
                let dist = norm_pair(&s, &s2, &a, &a2);
                if dist < 1e-12 {
                    continue;
                }
                for t in 0..=self.horizon {
                    if analytic_cost {
                        let dc = (self.base_cost(t, 0, &s, 0, &a) - self.base_cost(t, 0, &s2, 0, &a2)).abs();
                        worst = worst.max(dc / dist);
                    }
                    if analytic_dyn && t < self.horizon {
                        for k in 0..self.noise[t].len() {
                            let f1 = self.raw_next(t, 0, &s, 0, &a, k);
                            let f2 = self.raw_next(t, 0, &s2, 0, &a2, k);
                            worst = worst.max(euclid(&f1, &f2) / dist);
                        }
                    }
                }
            }
        }
        if !analytic_cost || !analytic_dyn {
            let ns = grid.states.len();
            let na = grid.actions.len();
            for t in 0..=self.horizon {
                for si in 0..ns {
                    for ai in 0..na {
                        let s = grid.states.point(si);
                        let a = grid.actions.point(ai);
                        for (sj, aj) in grid.states.neighbors(si).into_iter().map(|n| (n, ai))
                            .chain(grid.actions.neighbors(ai).into_iter().map(|n| (si, n)))
                        {
                            let s2 = grid.states.point(sj);
                            let a2 = grid.actions.point(aj);
                            let dist = norm_pair(&s, &s2, &a, &a2);
                            if !analytic_cost {
                                let dc = (self.base_cost(t, si, &s, ai, &a) - self.base_cost(t, sj, &s2, aj, &a2)).abs();
                                worst = worst.max(dc / dist);
                            }
                            if !analytic_dyn && t < self.horizon {
                                for k in 0..self.noise[t].len() {
                                    let f1 = self.raw_next(t, si, &s, ai, &a, k);
                                    let f2 = self.raw_next(t, sj, &s2, aj, &a2, k);
                                    worst = worst.max(euclid(&f1, &f2) / dist);
                                }
                            }
                        }
                    }
                }
            }
        }
        worst
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn norm_pair(s: &[f64], s2: &[f64], a: &[f64], a2: &[f64]) -> f64 {
    (euclid(s, s2).powi(2) + euclid(a, a2).powi(2)).sqrt()
}

/// Tensor grid over a box; flat indices run with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    axes: Vec<Vec<f64>>,
    lo: Vec<f64>,
    step: Vec<f64>,
}

impl BoxGrid {
    pub fn new(domain: &BoxDomain, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing {h} must be positive")));
        }
        let mut axes = Vec::new();
        let mut step = Vec::new();
        for (&l, &u) in domain.lo.iter().zip(&domain.hi) {
            let span = u - l;
            if span <= 0.0 {
                axes.push(vec![l]);
                step.push(h);
                continue;
            }
            let n = (span / h - 1e-9).ceil().max(1.0) as usize + 1;
            let st = span / (n - 1) as f64;
            axes.push((0..n).map(|i| if i + 1 == n { u } else { l + i as f64 * st }).collect());
            step.push(st);
        }
        Ok(Self {
            axes,
            lo: domain.lo.clone(),
            step,
        })
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn spacing(&self) -> f64 {
        self.axes
            .iter()
            .zip(&self.step)
            .map(|(a, s)| if a.len() > 1 { *s } else { 0.0 })
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

    fn neighbors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stride = 1;
        let mut rem = index;
        for axis in self.axes.iter().rev() {
            let i = rem % axis.len();
            rem /= axis.len();
            if i + 1 < axis.len() {
                out.push(index + stride);
            }
            stride *= axis.len();
        }
        out
    }

    /// Multilinear interpolation weights `(node, weight)` at `p` (clamped to the box).
    pub fn stencil(&self, p: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0)];
        for (k, axis) in self.axes.iter().enumerate() {
            let n = axis.len();
            let parts: Vec<(usize, f64)> = if n == 1 {
                vec![(0, 1.0)]
            } else {
                let u = ((p[k] - self.lo[k]) / self.step[k]).clamp(0.0, (n - 1) as f64);
                let r = u.round();
                if (u - r).abs() < 1e-9 {
                    vec![(r as usize, 1.0)]
                } else {
                    let i = (u.floor() as usize).min(n - 2);
                    let w = u - i as f64;
                    vec![(i, 1.0 - w), (i + 1, w)]
                }
            };
            out = out
                .into_iter()
                .flat_map(|(idx, w)| parts.iter().map(move |&(i, v)| (idx * n + i, w * v)))
                .collect();
        }
        out
    }
}

/// State, action and accumulated-cost grids for a problem.
#[derive(Debug, Clone)]
pub struct SocGrid {
    pub states: BoxGrid,
    pub actions: BoxGrid,
    pub xgrid: XGrid,
    /// Scaled node costs `costs[t][state node][action node]`.
    pub costs: Vec<Vec<Vec<f64>>>,
    /// Largest observed slope of costs and dynamics (never above the declared constant).
    pub observed_lipschitz: f64,
}

impl SocGrid {
    pub fn new(problem: &SocProblem, h_s: f64, h_a: f64, x_mode: XMode) -> Result<Self> {
        problem.validate()?;
        let states = BoxGrid::new(&problem.state_box, h_s)?;
        let actions = BoxGrid::new(&problem.action_box, h_a)?;
        let (ns, na) = (states.len(), actions.len());
        if let Dynamics::Tabulated { next } = &problem.dynamics {
            for (t, stage) in next.iter().enumerate() {
                if stage.len() != ns || stage.iter().any(|r| r.len() != na || r.iter().any(|sc| sc.len() != problem.noise[t].len())) {
                    return Err(Error::Config(format!("tabulated dynamics at stage {t} do not match the grid")));
                }
            }
        }
        if let SocCost::Tabulated { values } = &problem.cost {
            if values.iter().any(|st| st.len() != ns || st.iter().any(|r| r.len() != na)) {
                return Err(Error::Config("tabulated costs do not match the grid".into()));
            }
        }
        let costs: Vec<Vec<Vec<f64>>> = (0..=problem.horizon)
            .map(|t| {
                (0..ns)
                    .map(|si| {
                        let s = states.point(si);
                        (0..na)
                            .map(|ai| problem.cost_scale[t] * problem.base_cost(t, si, &s, ai, &actions.point(ai)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let xgrid = XGrid::from_costs(x_mode, &costs, 0.0, 0.0)?;
        let mut grid = Self {
            states,
            actions,
            xgrid,
            costs,
            observed_lipschitz: 0.0,
        };
        let observed = problem.observed_lipschitz(&grid);
        if observed > problem.lipschitz * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Config(format!(
                "declared Lipschitz constant {} is below the observed slope {observed}",
                problem.lipschitz
            )));
        }
        grid.observed_lipschitz = observed;
        Ok(grid)
    }
}

fn backward(
    problem: &SocProblem,
    family: &RiskFamily,
    theta: &[f64],
    grid: &SocGrid,
    policy: Option<&AugPolicy>,
) -> Result<(ValueTable, Option<AugPolicy>)> {
    if !family.theta_box().contains(theta) {
        return Err(Error::Domain(format!("θ = {theta:?} lies outside the parameter box")));
    }
    let horizon = problem.horizon;
    let ns = grid.states.len();
    let na = grid.actions.len();
    if let Some(pi) = policy {
        validate_policy(pi, problem, grid)?;
    }
    let f = |z: f64| family.eval_unchecked(theta, z);
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon + 1];
    let mut greedy: Vec<Vec<Vec<Decision>>> = vec![Vec::new(); horizon + 1];

    for t in (0..=horizon).rev() {
        let nodes = *grid.xgrid.stage(t);
        let nx = nodes.len();
        let next_nodes = (t < horizon).then(|| *grid.xgrid.stage(t + 1));
        let next_values = (t < horizon).then(|| &values[t + 1]);
        let fx: Vec<f64> = (0..nx).map(|j| f(nodes.x(j))).collect();

        let rows = (0..ns)
            .into_par_iter()
            .map(|si| -> Result<(Vec<f64>, Vec<Decision>)> {
                let s = grid.states.point(si);
                let q_row = |ai: usize| -> Result<Vec<f64>> {
                    let a = grid.actions.point(ai);
                    let c = grid.costs[t][si][ai];
                    let steps = grid.xgrid.cost_steps(t, si, ai);
                    let xc = |j: usize| match steps {
                        Some(k) => nodes.x(j + k),
                        None => nodes.x(j) + c,
                    };
                    let mut q: Vec<f64> = (0..nx).map(|j| f(xc(j)) - fx[j]).collect();
                    if let (Some(nn), Some(nv)) = (next_nodes, next_values) {
                        for (k, sc) in problem.noise[t].iter().enumerate() {
                            if sc.p == 0.0 {
                                continue;
                            }
                            let s2 = problem.next_state(t, si, &s, ai, &a, k)?;
                            for (node, w) in grid.states.stencil(&s2) {
                                let row = &nv[node];
                                let weight = sc.p * w;
                                for (j, qj) in q.iter_mut().enumerate() {
                                    let v = match steps {
                                        Some(kk) => row[j + kk],
                                        None => nn.interpolate(row, xc(j)),
                                    };
                                    *qj += weight * v;
                                }
                            }
                        }
                    }
                    Ok(q)
                };
                match policy {
                    Some(pi) => {
                        let mut out = vec![0.0; nx];
                        let mut cache: Vec<Option<Vec<f64>>> = vec![None; na];
                        for j in 0..nx {
                            for ai in 0..na {
                                let w = pi.stages[t][si][j].prob(ai);
                                if w == 0.0 {
                                    continue;
                                }
                                if cache[ai].is_none() {
                                    cache[ai] = Some(q_row(ai)?);
                                }
                                out[j] += w * cache[ai].as_ref().expect("cached")[j];
                            }
                        }
                        Ok((out, Vec::new()))
                    }
                    None => {
                        let mut best = vec![f64::INFINITY; nx];
                        let mut arg = vec![0usize; nx];
                        for ai in 0..na {
                            let q = q_row(ai)?;
                            for j in 0..nx {
                                if q[j] < best[j] || q[j].is_nan() {
                                    best[j] = q[j];
                                    arg[j] = ai;
                                }
                            }
                        }
                        Ok((best, arg.into_iter().map(Decision::Action).collect()))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stage_values = Vec::with_capacity(ns);
        let mut stage_policy = Vec::with_capacity(ns);
        for (si, (v, d)) in rows.into_iter().enumerate() {
            if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    stage: t,
                    state: si,
                    detail: format!("value {} at x = {}", v[bad], nodes.x(bad)),
                });
            }
            stage_values.push(v);
            stage_policy.push(d);
        }
        values[t] = stage_values;
        greedy[t] = stage_policy;
    }
    let table = ValueTable { stages: values };
    let greedy = policy.is_none().then_some(AugPolicy {
        stages: greedy,
        l_pi: None,
    });
    Ok((table, greedy))
}

fn validate_policy(pi: &AugPolicy, problem: &SocProblem, grid: &SocGrid) -> Result<()> {
    if pi.stages.len() != problem.horizon + 1 {
        return Err(Error::Config("policy covers the wrong number of stages".into()));
    }
    let na = grid.actions.len();
    for (t, stage) in pi.stages.iter().enumerate() {
        if stage.len() != grid.states.len() {
            return Err(Error::Config(format!("policy stage {t} has the wrong state count")));
        }
        for (si, row) in stage.iter().enumerate() {
            if row.len() != grid.xgrid.stage(t).len() {
                return Err(Error::Config(format!("policy entry undefined at stage {t}, state node {si}")));
            }
            for d in row {
                let ok = match d {
                    Decision::Action(a) => *a < na,
                    Decision::Mixed(p) => {
                        p.len() == na && p.iter().all(|&q| q >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
                    }
                };
                if !ok {
                    return Err(Error::Config(format!("invalid policy entry at stage {t}, state node {si}")));
                }
            }
        }
    }
    Ok(())
}

/// Optimal augmented values on the grid and the greedy policy (lowest action node on ties).
pub fn soc_dp_optimize(
    problem: &SocProblem,
    family: &RiskFamily,
    theta: &[f64],
    grid: &SocGrid,
) -> Result<(ValueTable, AugPolicy)> {
    let (t, p) = backward(problem, family, theta, grid, None)?;
    Ok((t, p.expect("greedy policy")))
}

/// Values of a grid policy (decisions index action nodes).
pub fn soc_dp_evaluate(
    problem: &SocProblem,
    policy: &AugPolicy,
    family: &RiskFamily,
    theta: &[f64],
    grid: &SocGrid,
) -> Result<ValueTable> {
    Ok(backward(problem, family, theta, grid, Some(policy))?.0)
}

/// Stage-0 value at an arbitrary state `s` and accumulated cost `x`.
pub fn soc_value_at(table: &ValueTable, grid: &SocGrid, s: &[f64], x: f64) -> f64 {
    let nodes = grid.xgrid.stage(0);
    grid.states
        .stencil(s)
        .into_iter()
        .map(|(node, w)| w * nodes.interpolate(&table.stages[0][node], x))
        .sum()
}

#[derive(Debug, Clone)]
pub struct SocRisk {
    pub risk: f64,
    pub theta_star: Vec<f64>,
    pub policy: AugPolicy,
    pub values: ValueTable,
}

/// `min_θ Ṽ_0^θ(s0, 0) + f_θ(0)` over the θ grid.
pub fn soc_optimal_risk(
    problem: &SocProblem,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    s0: &[f64],
    grid: &SocGrid,
) -> Result<SocRisk> {
    if !problem.state_box.contains(s0, 1e-12) {
        return Err(Error::Config(format!("initial state {s0:?} lies outside the state box")));
    }
    if !theta_grid.contained_in(family.theta_box()) || theta_grid.dim() != family.theta_dim() {
        return Err(Error::Config("θ grid does not fit the family".into()));
    }
    let scores = (0..theta_grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = theta_grid.point(i);
            let (table, _) = backward(problem, family, &theta, grid, None)?;
            Ok(soc_value_at(&table, grid, s0, 0.0) + family.eval_unchecked(&theta, 0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v < scores[best] {
            best = i;
        }
    }
    let theta_star = theta_grid.point(best);
    let (values, policy) = soc_dp_optimize(problem, family, &theta_star, grid)?;
    Ok(SocRisk {
        risk: scores[best],
        theta_star,
        policy,
        values,
    })
}

/// Lipschitz moduli `(L_X^t, L_S^t)` of the augmented values in the accumulated
/// cost and in the state. `l_pi = None` gives the optimal-value moduli.
pub fn soc_moduli(horizon: usize, t: usize, l_c: f64, l: f64, l_pi: Option<f64>) -> (f64, f64) {
    match l_pi {
        None => {
            let l_x = opt_modulus(horizon, t, l_c);
            let mut l_s = l * l_c;
            for tau in (t..horizon).rev() {
                l_s = (l_c + opt_modulus(horizon, tau + 1, l_c) + l_s) * l;
            }
            (l_x, l_s)
        }
        Some(lp) => {
            let l_x = eval_modulus(horizon, t, l_c, lp);
            let mut l_s = lp * l_c + l * l_c;
            for tau in (t..horizon).rev() {
                l_s = (horizon - tau + 1) as f64 * lp * l_c
                    + (l_c + eval_modulus(horizon, tau + 1, l_c, lp) + l_s) * l;
            }
            (l_x, l_s)
        }
    }
}

/// Encodes a finite MDP as a control problem on the integer grid.
///
/// States and actions become the nodes `0, 1, ...` of one-dimensional boxes.
/// Each stage's scenarios are the cells between the merged cumulative
/// breakpoints of all kernel rows, and a scenario maps `(s, a)` to the state
/// whose cumulative interval contains the cell; this reproduces every kernel
/// row exactly. Use grid spacing 1 for both boxes.
pub fn embed_mdp(mdp: &FiniteHorizonMdp) -> Result<SocProblem> {
    let ns = mdp.n_states(0);
    let na = mdp.n_actions(0);
    for t in 0..=mdp.horizon() {
        if mdp.n_states(t) != ns || mdp.n_actions(t) != na {
            return Err(Error::Config("embedding needs the same state and action sets at every stage".into()));
        }
    }
    let mut noise = Vec::with_capacity(mdp.horizon());
    let mut next = Vec::with_capacity(mdp.horizon());
    for t in 0..mdp.horizon() {
        let mut cuts: Vec<f64> = vec![0.0, 1.0];
        for s in 0..ns {
            for a in 0..na {
                let mut acc = 0.0;
                for &p in mdp.kernel_row(t, s, a) {
                    acc += p;
                    cuts.push(acc.min(1.0));
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
        let cells: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).filter(|(l, u)| u > l).collect();
        let scenarios: Vec<Scenario> = cells
            .iter()
            .map(|&(l, u)| Scenario {
                xi: vec![0.5 * (l + u)],
                p: u - l,
            })
            .collect();
        let total: f64 = scenarios.iter().map(|s| s.p).sum();
        let scenarios: Vec<Scenario> = scenarios.into_iter().map(|s| Scenario { xi: s.xi, p: s.p / total }).collect();
        let stage_next: Vec<Vec<Vec<Vec<f64>>>> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        scenarios
                            .iter()
                            .map(|sc| vec![inverse_cdf(mdp.kernel_row(t, s, a), sc.xi[0]) as f64])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        noise.push(scenarios);
        next.push(stage_next);
    }
    let costs = mdp.costs().to_vec();
    let state_box = BoxDomain::new(vec![0.0], vec![(ns - 1) as f64])?;
    let action_box = BoxDomain::new(vec![0.0], vec![(na - 1) as f64])?;
    let mut problem = SocProblem {
        horizon: mdp.horizon(),
        state_box,
        action_box,
        dynamics: Dynamics::Tabulated { next },
        cost: SocCost::Tabulated { values: costs },
        noise,
        cost_scale: vec![1.0; mdp.horizon() + 1],
        lipschitz: f64::MAX,
    };
    let probe = SocGrid::new(&problem, 1.0, 1.0, XMode::Uniform { h: 1.0 })?;
    problem.lipschitz = probe.observed_lipschitz;
    Ok(problem)
}

fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (s, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::two_action;
    use crate::mdp::optimal_risk;
    use crate::risk::ThetaBox;

    fn cvar(alpha: f64, hi: f64) -> RiskFamily {
        RiskFamily::cvar(alpha, ThetaBox::new(vec![0.0], vec![hi]).unwrap()).unwrap()
    }

    fn constant_problem(c: f64) -> SocProblem {
        SocProblem {
            horizon: 1,
            state_box: BoxDomain::new(vec![0.0], vec![1.0]).unwrap(),
            action_box: BoxDomain::new(vec![0.0], vec![0.0]).unwrap(),
            dynamics: Dynamics::Linear {
                a: vec![vec![1.0]],
                b: vec![vec![0.0]],
                clamp: false,
            },
            cost: SocCost::Constant(c),
            noise: vec![vec![Scenario { xi: vec![0.0], p: 1.0 }]],
            cost_scale: vec![1.0, 1.0],
            lipschitz: 1.0,
        }
    }

    #[test]
    fn zero_cost_values_vanish() {
        let p = constant_problem(0.0);
        let g = SocGrid::new(&p, 0.5, 1.0, XMode::Uniform { h: 0.1 }).unwrap();
        let (t, _) = soc_dp_optimize(&p, &cvar(0.5, 1.0), &[0.3], &g).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn single_path_telescopes() {
        let p = constant_problem(0.3);
        let g = SocGrid::new(&p, 0.5, 1.0, XMode::Lattice { k: 10 }).unwrap();
        let f = cvar(0.5, 1.0);
        let (t, _) = soc_dp_optimize(&p, &f, &[0.6], &g).unwrap();
        let v = soc_value_at(&t, &g, &[0.5], 0.0);
        assert!((v - (f.eval(&[0.6], 0.6).unwrap() - f.eval(&[0.6], 0.0).unwrap())).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
        let tg = ThetaGrid::with_step(f.theta_box(), 0.05).unwrap();
        let r = soc_optimal_risk(&p, &f, &tg, &[0.5], &g).unwrap();
        assert!((r.risk - 0.6).abs() < 1e-12);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let mut p = constant_problem(0.1);
        p.noise = vec![vec![Scenario { xi: vec![0.5], p: 1.0 }]];
        let g = SocGrid::new(&p, 0.5, 1.0, XMode::Uniform { h: 0.1 }).unwrap();
        let err = soc_dp_optimize(&p, &cvar(0.5, 1.0), &[0.3], &g).unwrap_err();
        match err {
            Error::Dynamics { stage, noise, .. } => {
                assert_eq!(stage, 0);
                assert_eq!(noise, vec![0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn understated_lipschitz_constant_is_rejected() {
        let mut p = constant_problem(0.1);
        p.cost = SocCost::Quadratic { q_s: vec![1.0], q_a: vec![0.0] };
        p.lipschitz = 1.0;
        assert!(SocGrid::new(&p, 0.5, 1.0, XMode::Uniform { h: 0.1 }).is_err());
        p.lipschitz = 2.0;
        assert!(SocGrid::new(&p, 0.5, 1.0, XMode::Uniform { h: 0.1 }).is_ok());
    }

    #[test]
    fn embedded_two_action_instance_matches_tabular() {
        let m = two_action();
        let p = embed_mdp(&m).unwrap();
        let g = SocGrid::new(&p, 1.0, 1.0, XMode::Lattice { k: 5 }).unwrap();
        let f = cvar(0.5, 1.0);
        let tg = ThetaGrid::with_step(f.theta_box(), 0.05).unwrap();
        let r = soc_optimal_risk(&p, &f, &tg, &[0.0], &g).unwrap();
        let xg = XGrid::for_mdp(XMode::Lattice { k: 5 }, &m).unwrap();
        let d = optimal_risk(&m, &f, &tg, 0, &xg).unwrap();
        assert!((r.risk - 0.6).abs() < 1e-12);
        assert!((r.risk - d.risk).abs() < 1e-12);
    }

    #[test]
    fn moduli_recursions() {
        assert_eq!(soc_moduli(3, 3, 1.0, 2.0, None).1, 2.0);
        assert_eq!(soc_moduli(1, 0, 1.0, 1.0, None), (4.0, 4.0));
        let (lx, ls) = soc_moduli(1, 0, 1.0, 1.0, Some(0.0));
        assert_eq!(lx, 4.0);
        assert_eq!(ls, 4.0);
        let (_, ls) = soc_moduli(1, 1, 2.0, 3.0, Some(0.5));
        assert_eq!(ls, 0.5 * 2.0 + 3.0 * 2.0);
    }

    #[test]
    fn stencil_weights_sum_to_one() {
        let b = BoxDomain::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = BoxGrid::new(&b, 0.25).unwrap();
        let st = g.stencil(&[0.3, 0.1]);
        assert_eq!(st.len(), 4);
        assert!((st.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-15);
        let interp: f64 = st.iter().map(|&(i, w)| w * (g.point(i)[0] + 2.0 * g.point(i)[1])).sum();
        assert!((interp - 0.5).abs() < 1e-12);
    }
}
