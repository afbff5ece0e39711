//! Backward induction on the augmented MDP.
//!
//! With accumulated cost `x` appended to the state, the stage cost becomes
//! `f_θ(x + c_t(s, a)) − f_θ(x)` and `x` advances by `c_t(s, a)`. Summed along a
//! trajectory started at `x = 0` the costs telescope to `f_θ(total) − f_θ(0)`, so
//! `Ṽ_0(s, 0) + f_θ(0)` is the expected `f_θ` of the total cost.

use rayon::prelude::*;

use super::{AugPolicy, Decision, FiniteHorizonMdp, ValueTable, XGrid};
use crate::error::{Error, Result};
use crate::risk::{RiskFamily, ThetaGrid};

/// `f_θ(x + c_t(s, a)) − f_θ(x)` for `x` in the reachable range `[0, Σ_{τ<t} max c_τ]`.
pub fn augmented_cost(
    mdp: &FiniteHorizonMdp,
    family: &RiskFamily,
    theta: &[f64],
    t: usize,
    s: usize,
    x: f64,
    a: usize,
) -> Result<f64> {
    if t > mdp.horizon() || s >= mdp.n_states(t) || a >= mdp.n_actions(t) {
        return Err(Error::Domain(format!("index (t={t}, s={s}, a={a}) is out of range")));
    }
    let reach = mdp.accumulated_bound(t);
    if !(x >= -1e-12 && x <= reach + 1e-12) {
        return Err(Error::Domain(format!(
            "accumulated cost {x} lies outside [0, {reach}] at stage {t}"
        )));
    }
    let c = mdp.cost(t, s, a);
    Ok(family.eval(theta, x + c)? - family.eval(theta, x)?)
}

/// Optimal augmented values `Ṽ_t^θ` and the greedy policy (ties go to the lowest action).
pub fn dp_optimize(
    mdp: &FiniteHorizonMdp,
    family: &RiskFamily,
    theta: &[f64],
    grid: &XGrid,
) -> Result<(ValueTable, AugPolicy)> {
    let (table, policy) = backward(mdp, family, theta, grid, None)?;
    Ok((table, policy.expect("greedy policy")))
}

/// Values `Ṽ_t^{π,θ}` of an augmented-state policy.
pub fn dp_evaluate(
    mdp: &FiniteHorizonMdp,
    policy: &AugPolicy,
    family: &RiskFamily,
    theta: &[f64],
    grid: &XGrid,
) -> Result<ValueTable> {
    policy.validate(mdp, grid)?;
    Ok(backward(mdp, family, theta, grid, Some(policy))?.0)
}

fn check_theta(family: &RiskFamily, theta: &[f64]) -> Result<()> {
    if !family.theta_box().contains(theta) {
        return Err(Error::Domain(format!("θ = {theta:?} lies outside the parameter box")));
    }
    Ok(())
}

fn backward(
    mdp: &FiniteHorizonMdp,
    family: &RiskFamily,
    theta: &[f64],
    grid: &XGrid,
    policy: Option<&AugPolicy>,
) -> Result<(ValueTable, Option<AugPolicy>)> {
    check_theta(family, theta)?;
    grid.check_compatible(mdp)?;
    let horizon = mdp.horizon();
    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::new(); horizon + 1];
    let mut greedy: Vec<Vec<Vec<Decision>>> = vec![Vec::new(); horizon + 1];
    let f = |z: f64| family.eval_unchecked(theta, z);

    for t in (0..=horizon).rev() {
        let nodes = *grid.stage(t);
        let next_nodes = (t < horizon).then(|| *grid.stage(t + 1));
        let next_values = (t < horizon).then(|| &values[t + 1]);
        let na = mdp.n_actions(t);
        let mut stage_values = Vec::with_capacity(mdp.n_states(t));
        let mut stage_policy = Vec::with_capacity(mdp.n_states(t));

        for s in 0..mdp.n_states(t) {
            let q = |j: usize, a: usize| -> f64 {
                let c = mdp.cost(t, s, a);
                let (xc, next_index) = match grid.cost_steps(t, s, a) {
                    Some(k) => (nodes.x(j + k), Some(j + k)),
                    None => (nodes.x(j) + c, None),
                };
                let mut v = f(xc) - f(nodes.x(j));
                if let (Some(nn), Some(nv)) = (next_nodes, next_values) {
                    let row = mdp.kernel_row(t, s, a);
                    for (s2, &p) in row.iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let cont = match next_index {
                            Some(i) => nv[s2][i],
                            None => nn.interpolate(&nv[s2], xc),
                        };
                        v += p * cont;
                    }
                }
                v
            };

            let cells: Vec<(f64, Option<usize>)> = (0..nodes.len())
                .into_par_iter()
                .with_min_len(64)
                .map(|j| match policy {
                    Some(pi) => {
                        let v = match pi.decision(t, s, j) {
                            Decision::Action(a) => q(j, *a),
                            Decision::Mixed(p) => p
                                .iter()
                                .enumerate()
                                .filter(|(_, &w)| w > 0.0)
                                .map(|(a, &w)| w * q(j, a))
                                .sum(),
                        };
                        (v, None)
                    }
                    None => {
                        let mut best = (f64::INFINITY, 0usize);
                        for a in 0..na {
                            let v = q(j, a);
                            if v < best.0 || v.is_nan() {
                                best = (v, a);
                                if v.is_nan() {
                                    break;
                                }
                            }
                        }
                        (best.0, Some(best.1))
                    }
                })
                .collect();

            let mut row_values = Vec::with_capacity(cells.len());
            let mut row_policy = Vec::with_capacity(cells.len());
            for (j, (v, a)) in cells.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric {
                        stage: t,
                        state: s,
                        detail: format!("value {v} at x = {}", nodes.x(j)),
                    });
                }
                row_values.push(v);
                if let Some(a) = a {
                    row_policy.push(Decision::Action(a));
                }
            }
            stage_values.push(row_values);
            stage_policy.push(row_policy);
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

/// Result of minimizing over θ and policies.
#[derive(Debug, Clone)]
pub struct OptimalRisk {
    pub risk: f64,
    pub theta_star: Vec<f64>,
    pub policy: AugPolicy,
    pub values: ValueTable,
}

fn start_value(table: &ValueTable, grid: &XGrid, s0: usize) -> f64 {
    table.at(grid, 0, s0, 0.0)
}

fn check_start(mdp: &FiniteHorizonMdp, grid: &XGrid, theta_grid: &ThetaGrid, family: &RiskFamily, s0: usize) -> Result<()> {
    if s0 >= mdp.n_states(0) {
        return Err(Error::Config(format!("initial state {s0} is out of range")));
    }
    if theta_grid.dim() != family.theta_dim() {
        return Err(Error::Config("θ grid dimension does not match the family".into()));
    }
    if !theta_grid.contained_in(family.theta_box()) {
        return Err(Error::Domain("θ grid leaves the parameter box".into()));
    }
    let st = grid.stage(0);
    if st.lo() > 1e-12 || st.hi() < -1e-12 {
        return Err(Error::Config("stage-0 x nodes do not cover x = 0".into()));
    }
    Ok(())
}

/// `min_θ min_π Ṽ_0^θ(s0, 0) + f_θ(0)` over the θ grid (lowest grid index on ties).
pub fn optimal_risk(
    mdp: &FiniteHorizonMdp,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    s0: usize,
    grid: &XGrid,
) -> Result<OptimalRisk> {
    check_start(mdp, grid, theta_grid, family, s0)?;
    let scores = (0..theta_grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = theta_grid.point(i);
            let (table, _) = backward(mdp, family, &theta, grid, None)?;
            Ok(start_value(&table, grid, s0) + family.eval_unchecked(&theta, 0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = argmin(&scores);
    let theta_star = theta_grid.point(best);
    let (values, policy) = dp_optimize(mdp, family, &theta_star, grid)?;
    Ok(OptimalRisk {
        risk: scores[best],
        theta_star,
        policy,
        values,
    })
}

/// `min_θ Ṽ_0^{π,θ}(s0, 0) + f_θ(0)` over the θ grid.
pub fn policy_risk(
    mdp: &FiniteHorizonMdp,
    policy: &AugPolicy,
    family: &RiskFamily,
    theta_grid: &ThetaGrid,
    s0: usize,
    grid: &XGrid,
) -> Result<(f64, Vec<f64>)> {
    check_start(mdp, grid, theta_grid, family, s0)?;
    policy.validate(mdp, grid)?;
    let scores = (0..theta_grid.len())
        .into_par_iter()
        .map(|i| {
            let theta = theta_grid.point(i);
            let (table, _) = backward(mdp, family, &theta, grid, Some(policy))?;
            Ok(start_value(&table, grid, s0) + family.eval_unchecked(&theta, 0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = argmin(&scores);
    Ok((scores[best], theta_grid.point(best)))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
