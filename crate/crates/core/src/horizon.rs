//! Discounted infinite-horizon problems.
//!
//! Risk is computed on the T-stage approximation with stage costs `γ^t c`,
//! whose error is at most `L_C γ^T / (1 − γ)`. The fixed-point operators of the
//! infinite-horizon problem are used as validation instruments: applying them to
//! tables built from a truncation measures how far those tables are from a fixed
//! point. Under the scaling identity `f_θ(γx) = γ f_{θ/γ}(x)` the two-variable
//! operator is
//!
//! `T[V](s, x, θ) = Σ_a π(a|s) [f_θ(x + c) − f_θ(x) + γ E V(s', (x + c)/γ, θ/γ)]`,
//!
//! and for CVaR a single augmented variable suffices, with the continuation
//! evaluated at the shifted point `(x + c + (γ − 1)θ)/γ`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{
    dp_evaluate, dp_optimize, optimal_risk, AugPolicy, Decision, FiniteHorizonMdp, OptimalRisk,
    StageNodes, XGrid, XMode,
};
use crate::risk::{check_scaling, RiskFamily, ThetaBox, ThetaGrid};

/// Stationary discounted MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteMdp {
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
    gamma: f64,
}

impl InfiniteMdp {
    /// `kernel[s][a][s']`, `cost[s][a] ∈ [0, 1]`, `gamma ∈ [0, 1)`.
    pub fn new(kernel: Vec<Vec<Vec<f64>>>, cost: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("discount {gamma} must lie in [0, 1)")));
        }
        // Shape and stochasticity checks are shared with the finite-horizon model.
        FiniteHorizonMdp::new(vec![kernel.clone()], vec![cost.clone(), cost.clone()])?;
        Ok(Self {
            kernel,
            cost,
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.cost.len()
    }

    pub fn n_actions(&self) -> usize {
        self.cost[0].len()
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.cost[s][a]
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        &self.kernel[s][a]
    }

    pub fn kernel(&self) -> &[Vec<Vec<f64>>] {
        &self.kernel
    }

    pub fn costs(&self) -> &[Vec<f64>] {
        &self.cost
    }

    pub fn max_cost(&self) -> f64 {
        self.cost.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Upper bound `max c / (1 − γ)` on the discounted total cost.
    pub fn cost_bound(&self) -> f64 {
        self.max_cost() / (1.0 - self.gamma)
    }
}

/// Number of stages and the guaranteed truncation error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPlan {
    /// Index `T` of the last kept stage.
    pub horizon: usize,
    /// `L_C γ^T / (1 − γ)`.
    pub epsilon_trunc: f64,
}

/// Smallest `T ≥ 1` with `L_C γ^T / (1 − γ) ≤ eps`.
pub fn truncation_horizon(gamma: f64, eps: f64, l_c: f64) -> Result<TruncationPlan> {
    if !(gamma >= 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("discount {gamma} must lie in [0, 1)")));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("truncation tolerance {eps} must be positive")));
    }
    if !(l_c > 0.0 && l_c.is_finite()) {
        return Err(Error::Config(format!("Lipschitz constant {l_c} must be finite and positive")));
    }
    let bound = |t: usize| l_c * gamma.powi(t as i32) / (1.0 - gamma);
    let mut t = if gamma > 0.0 {
        let guess = ((eps * (1.0 - gamma) / l_c).ln() / gamma.ln()).floor();
        (guess.max(1.0) as usize).saturating_sub(1).max(1)
    } else {
        1
    };
    while bound(t) > eps {
        t += 1;
        if t > 10_000_000 {
            return Err(Error::Config("truncation horizon exceeds 10^7 stages".into()));
        }
    }
    while t > 1 && bound(t - 1) <= eps {
        t -= 1;
    }
    Ok(TruncationPlan {
        horizon: t,
        epsilon_trunc: bound(t),
    })
}

/// Stages `0..=T` with costs `γ^t c`.
pub fn truncate_at(inf: &InfiniteMdp, horizon: usize) -> Result<FiniteHorizonMdp> {
    let costs = (0..=horizon)
        .map(|t| {
            let g = inf.gamma.powi(t as i32);
            inf.cost
                .iter()
                .map(|row| row.iter().map(|c| g * c).collect())
                .collect()
        })
        .collect();
    FiniteHorizonMdp::new(vec![inf.kernel.clone(); horizon], costs)
}

/// T-stage approximation with the horizon chosen by [`truncation_horizon`].
pub fn truncate(inf: &InfiniteMdp, eps: f64, l_c: f64) -> Result<(FiniteHorizonMdp, TruncationPlan)> {
    let plan = truncation_horizon(inf.gamma, eps, l_c)?;
    Ok((truncate_at(inf, plan.horizon)?, plan))
}

/// Optimal risk of the T-stage approximation.
pub fn truncated_risk(
    inf: &InfiniteMdp,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    s0: usize,
    horizon: usize,
    mode: XMode,
) -> Result<OptimalRisk> {
    let mdp = truncate_at(inf, horizon)?;
    let grid = XGrid::for_mdp(mode, &mdp)?;
    optimal_risk(&mdp, family, theta_grid, s0, &grid)
}

/// Stationary randomized policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(probs: Vec<Vec<f64>>, inf: &InfiniteMdp) -> Result<Self> {
        if probs.len() != inf.n_states() {
            return Err(Error::Config("stationary policy has the wrong state count".into()));
        }
        for row in &probs {
            let total: f64 = row.iter().sum();
            if row.len() != inf.n_actions() || row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config("stationary policy row is not a distribution".into()));
            }
        }
        Ok(Self { probs })
    }

    pub fn deterministic(actions: &[usize], inf: &InfiniteMdp) -> Result<Self> {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; inf.n_actions()];
                if a < row.len() {
                    row[a] = 1.0;
                }
                row
            })
            .collect();
        Self::new(probs, inf)
    }

    fn as_aug(&self, mdp: &FiniteHorizonMdp, grid: &XGrid) -> AugPolicy {
        AugPolicy::from_fn(mdp, grid, |_, s, _| Decision::Mixed(self.probs[s].clone()))
    }
}

/// Augmented values `V(s, x, θ)` of a truncation at stage 0, on a window of x-nodes
/// and a finite list of θ values.
///
/// The first `base` entries of `thetas` are the points where residuals are
/// measured; the remaining entries are their images `θ/γ` needed by the operator.
#[derive(Debug, Clone)]
pub struct AugmentedValues {
    pub horizon: usize,
    pub thetas: Vec<Vec<f64>>,
    pub base: usize,
    pub nodes: StageNodes,
    pub window: (f64, f64),
    /// `values[θ][s][j]`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl AugmentedValues {
    /// Value at `(s, x)` for θ index `i`, linearly extrapolated outside the nodes.
    pub fn lookup(&self, i: usize, s: usize, x: f64) -> (f64, bool) {
        self.nodes.extrapolate(&self.values[i][s], x)
    }

    /// Node indices inside the residual window.
    pub fn window_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&j| {
                let x = self.nodes.x(j);
                x >= self.window.0 - 1e-12 && x <= self.window.1 + 1e-12
            })
            .collect()
    }
}

/// Max-norm residual report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub max_abs: f64,
    /// Number of lookups that fell outside the table and were extrapolated.
    pub extrapolated: usize,
    pub points: usize,
}

fn expanded_family(family: &RiskFamily, thetas: &[Vec<f64>]) -> Result<RiskFamily> {
    let b = family.theta_box();
    let mut lo = b.lo.clone();
    let mut hi = b.hi.clone();
    for th in thetas {
        for (k, &v) in th.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    family.with_theta_box(ThetaBox::new(lo, hi)?)
}

fn require_scaling(family: &RiskFamily, thetas: &[Vec<f64>], gamma: f64) -> Result<()> {
    if !family.supports_scaling() {
        return Err(Error::UnsupportedFamily(format!(
            "{} has no finite Lipschitz constant, so the scaled operator is not defined",
            family.label()
        )));
    }
    let probes: Vec<f64> = (0..=20).map(|i| -1.0 + 0.25 * i as f64).collect();
    for th in thetas {
        let r = check_scaling(family, th, gamma, &probes)?;
        if !(r <= 1e-9) {
            return Err(Error::UnsupportedFamily(format!(
                "{} violates f_θ(γx) = γ f_(θ/γ)(x) by {r}",
                family.label()
            )));
        }
    }
    Ok(())
}

fn positive_gamma(inf: &InfiniteMdp) -> Result<f64> {
    if inf.gamma <= 0.0 {
        return Err(Error::Config("fixed-point residuals need a positive discount".into()));
    }
    Ok(inf.gamma)
}

/// Builds `V(s, x, θ)` from the T-stage approximation for every base θ and its image `θ/γ`.
///
/// With `policy = None` the optimal values are tabulated. The x-table covers the
/// residual window and every point `(x + c)/γ` reached from it.
pub fn truncated_values(
    inf: &InfiniteMdp,
    family: &RiskFamily,
    policy: Option<&StationaryPolicy>,
    horizon: usize,
    base_thetas: &[Vec<f64>],
    window: (f64, f64),
    mode: XMode,
) -> Result<AugmentedValues> {
    let gamma = positive_gamma(inf)?;
    if base_thetas.is_empty() {
        return Err(Error::Config("no θ values to tabulate".into()));
    }
    let mut thetas = base_thetas.to_vec();
    thetas.extend(base_thetas.iter().map(|th| th.iter().map(|v| v / gamma).collect::<Vec<_>>()));
    let lo = window.0.min(window.0 / gamma);
    let hi = window.1.max((window.1 + inf.max_cost()) / gamma);
    tabulate(inf, family, policy, horizon, thetas, base_thetas.len(), window, (lo, hi), mode)
}

#[allow(clippy::too_many_arguments)]
fn tabulate(
    inf: &InfiniteMdp,
    family: &RiskFamily,
    policy: Option<&StationaryPolicy>,
    horizon: usize,
    thetas: Vec<Vec<f64>>,
    base: usize,
    window: (f64, f64),
    span: (f64, f64),
    mode: XMode,
) -> Result<AugmentedValues> {
    let mdp = truncate_at(inf, horizon)?;
    let grid = XGrid::with_window(mode, &mdp, span.0, span.1)?;
    let fam = expanded_family(family, &thetas)?;
    let aug = policy.map(|p| p.as_aug(&mdp, &grid));
    let values = thetas
        .par_iter()
        .map(|th| {
            let table = match &aug {
                Some(p) => dp_evaluate(&mdp, p, &fam, th, &grid)?,
                None => dp_optimize(&mdp, &fam, th, &grid)?.0,
            };
            Ok(table.stages[0].clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedValues {
        horizon,
        thetas,
        base,
        nodes: *grid.stage(0),
        window,
        values,
    })
}

fn residual_two_variable(
    inf: &InfiniteMdp,
    policy: Option<&StationaryPolicy>,
    family: &RiskFamily,
    table: &AugmentedValues,
) -> Result<Residual> {
    let gamma = positive_gamma(inf)?;
    require_scaling(family, &table.thetas[..table.base], gamma)?;
    if table.thetas.len() != 2 * table.base {
        return Err(Error::Config("table lacks the scaled θ values".into()));
    }
    let nodes = table.window_nodes();
    let mut report = Residual {
        max_abs: 0.0,
        extrapolated: 0,
        points: 0,
    };
    for i in 0..table.base {
        let theta = &table.thetas[i];
        let scaled = table.base + i;
        let f = |z: f64| family.eval_unchecked(theta, z);
        for s in 0..inf.n_states() {
            for &j in &nodes {
                let x = table.nodes.x(j);
                let mut outside = 0;
                let mut q = |a: usize| {
                    let xc = x + inf.cost(s, a);
                    let mut v = f(xc) - f(x);
                    for (s2, &p) in inf.kernel_row(s, a).iter().enumerate() {
                        if p > 0.0 {
                            let (w, out) = table.lookup(scaled, s2, xc / gamma);
                            outside += usize::from(out);
                            v += gamma * p * w;
                        }
                    }
                    v
                };
                let tv = match policy {
                    Some(pi) => (0..inf.n_actions())
                        .filter(|&a| pi.probs[s][a] > 0.0)
                        .map(|a| pi.probs[s][a] * q(a))
                        .sum::<f64>(),
                    None => (0..inf.n_actions()).map(&mut q).fold(f64::INFINITY, f64::min),
                };
                report.max_abs = report.max_abs.max((tv - table.values[i][s][j]).abs());
                report.extrapolated += outside;
                report.points += 1;
            }
        }
    }
    Ok(report)
}

/// `max |T^π[V] − V|` over the table's window and base θ values.
pub fn bellman_residual_eval(
    inf: &InfiniteMdp,
    policy: &StationaryPolicy,
    family: &RiskFamily,
    table: &AugmentedValues,
) -> Result<Residual> {
    residual_two_variable(inf, Some(policy), family, table)
}

/// `max |T[V] − V|` with the minimizing operator.
pub fn bellman_residual_opt(
    inf: &InfiniteMdp,
    family: &RiskFamily,
    table: &AugmentedValues,
) -> Result<Residual> {
    residual_two_variable(inf, None, family, table)
}

/// Values `V(s, x) = E[f_θ(x + Σ_t γ^t c_t)] − f_θ(x)` of a truncation for a single CVaR θ,
/// on x-nodes covering the window and the shifted points `(x + c + (γ − 1)θ)/γ`.
pub fn cvar_truncated_values(
    inf: &InfiniteMdp,
    policy: &StationaryPolicy,
    family: &RiskFamily,
    theta: f64,
    horizon: usize,
    window: (f64, f64),
    mode: XMode,
) -> Result<AugmentedValues> {
    if !family.is_cvar() {
        return Err(Error::UnsupportedFamily(format!(
            "single-variable operator needs CVaR, got {}",
            family.label()
        )));
    }
    let gamma = positive_gamma(inf)?;
    let shift = (gamma - 1.0) * theta;
    let lo = window.0.min((window.0 + shift) / gamma);
    let hi = window.1.max((window.1 + inf.max_cost() + shift) / gamma);
    tabulate(inf, family, Some(policy), horizon, vec![vec![theta]], 1, window, (lo, hi), mode)
}

/// Residual of the single-variable CVaR operator
///
/// `T[V](s, x) = Σ_a π(a|s) [f_θ(x + c) − f_θ(x) + (1 − γ)θ
///               + E(γ V(s', y) + γ f_θ(y) − f_θ(x + c))]`, `y = (x + c + (γ − 1)θ)/γ`.
pub fn cvar_operator_residual(
    inf: &InfiniteMdp,
    policy: &StationaryPolicy,
    family: &RiskFamily,
    table: &AugmentedValues,
) -> Result<Residual> {
    let Some(_) = family.alpha() else {
        return Err(Error::UnsupportedFamily(format!(
            "single-variable operator needs CVaR, got {}",
            family.label()
        )));
    };
    let gamma = positive_gamma(inf)?;
    if table.thetas.len() != 1 {
        return Err(Error::Config("single-variable table must hold exactly one θ".into()));
    }
    let theta = table.thetas[0][0];
    let f = |z: f64| family.eval_unchecked(&[theta], z);
    let mut report = Residual {
        max_abs: 0.0,
        extrapolated: 0,
        points: 0,
    };
    for s in 0..inf.n_states() {
        for j in table.window_nodes() {
            let x = table.nodes.x(j);
            let mut tv = 0.0;
            for a in 0..inf.n_actions() {
                let w = policy.probs[s][a];
                if w == 0.0 {
                    continue;
                }
                let xc = x + inf.cost(s, a);
                let y = (xc + (gamma - 1.0) * theta) / gamma;
                let mut v = f(xc) - f(x) + (1.0 - gamma) * theta;
                for (s2, &p) in inf.kernel_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        let (val, out) = table.lookup(0, s2, y);
                        report.extrapolated += usize::from(out);
                        v += p * (gamma * val + gamma * f(y) - f(xc));
                    }
                }
                tv += w * v;
            }
            report.max_abs = report.max_abs.max((tv - table.values[0][s][j]).abs());
            report.points += 1;
        }
    }
    Ok(report)
}

/// Residual bound `2 L_f γ^T / (1 − γ)` for tables built from a truncation at `T`.
pub fn residual_bound(l_f: f64, gamma: f64, horizon: usize) -> f64 {
    2.0 * l_f * gamma.powi(horizon as i32) / (1.0 - gamma)
}
