use serde::{Deserialize, Serialize};

use super::{FiniteHorizonMdp, XGrid};
use crate::error::{Error, Result};

/// Stage-indexed values over `(state, x-node)`: `stages[t][s][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub stages: Vec<Vec<Vec<f64>>>,
}

impl ValueTable {
    pub fn value(&self, t: usize, s: usize, j: usize) -> f64 {
        self.stages[t][s][j]
    }

    /// Value at an arbitrary accumulated cost, interpolated between nodes.
    pub fn at(&self, grid: &XGrid, t: usize, s: usize, x: f64) -> f64 {
        grid.stage(t).interpolate(&self.stages[t][s], x)
    }

    pub fn max_abs(&self) -> f64 {
        self.stages
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|V_t(s,x_{j+1}) − V_t(s,x_j)| − modulus(t)·Δx` over adjacent nodes.
    /// Non-positive when every stage respects its modulus.
    pub fn lipschitz_excess<F: Fn(usize) -> f64>(&self, grid: &XGrid, modulus: F) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (t, stage) in self.stages.iter().enumerate() {
            let dx = grid.stage(t).step();
            let m = modulus(t);
            for row in stage {
                for w in row.windows(2) {
                    worst = worst.max((w[1] - w[0]).abs() - m * dx);
                }
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        self.stages
            .iter()
            .flatten()
            .flatten()
            .zip(other.stages.iter().flatten().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Action rule at one `(stage, state, x-node)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decision {
    Action(usize),
    Mixed(Vec<f64>),
}

impl Decision {
    /// Probability assigned to action `a`.
    pub fn prob(&self, a: usize) -> f64 {
        match self {
            Decision::Action(b) => f64::from(u8::from(*b == a)),
            Decision::Mixed(p) => p.get(a).copied().unwrap_or(0.0),
        }
    }
}

/// Policy measurable in the augmented state: `stages[t][s][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub stages: Vec<Vec<Vec<Decision>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_pi: Option<f64>,
}

impl AugPolicy {
    /// Builds a policy by calling `rule(t, s, j)` at every node of the grid.
    pub fn from_fn<F>(mdp: &FiniteHorizonMdp, grid: &XGrid, mut rule: F) -> Self
    where
        F: FnMut(usize, usize, usize) -> Decision,
    {
        let stages = (0..=mdp.horizon())
            .map(|t| {
                (0..mdp.n_states(t))
                    .map(|s| (0..grid.stage(t).len()).map(|j| rule(t, s, j)).collect())
                    .collect()
            })
            .collect();
        Self { stages, l_pi: None }
    }

    /// The same action everywhere.
    pub fn constant(mdp: &FiniteHorizonMdp, grid: &XGrid, a: usize) -> Self {
        Self::from_fn(mdp, grid, |_, _, _| Decision::Action(a))
    }

    pub fn decision(&self, t: usize, s: usize, j: usize) -> &Decision {
        &self.stages[t][s][j]
    }

    /// Checks shapes, action indices, distributions, and the declared Lipschitz constant.
    pub fn validate(&self, mdp: &FiniteHorizonMdp, grid: &XGrid) -> Result<()> {
        if self.stages.len() != mdp.horizon() + 1 {
            return Err(Error::Config(format!(
                "policy covers {} stages, model has {}",
                self.stages.len(),
                mdp.horizon() + 1
            )));
        }
        for (t, stage) in self.stages.iter().enumerate() {
            let na = mdp.n_actions(t);
            let nodes = grid.stage(t).len();
            if stage.len() != mdp.n_states(t) {
                return Err(Error::Config(format!("policy stage {t} has the wrong state count")));
            }
            for (s, row) in stage.iter().enumerate() {
                if row.len() != nodes {
                    return Err(Error::Config(format!(
                        "policy entry undefined at stage {t}, state {s}: {} of {nodes} x-nodes given",
                        row.len()
                    )));
                }
                for (j, d) in row.iter().enumerate() {
                    match d {
                        Decision::Action(a) if *a >= na => {
                            return Err(Error::Config(format!(
                                "policy action {a} at ({t}, {s}, {j}) exceeds {na} actions"
                            )))
                        }
                        Decision::Mixed(p) => {
                            let total: f64 = p.iter().sum();
                            if p.len() != na
                                || p.iter().any(|&q| !(q >= 0.0))
                                || (total - 1.0).abs() > 1e-12
                            {
                                return Err(Error::Config(format!(
                                    "policy distribution at ({t}, {s}, {j}) is invalid"
                                )));
                            }
                        }
                        _ => {}
                    }
                }
                if let Some(l_pi) = self.l_pi {
                    let dx = grid.stage(t).step();
                    for j in 1..row.len() {
                        let l1: f64 = (0..na)
                            .map(|a| (row[j].prob(a) - row[j - 1].prob(a)).abs())
                            .sum();
                        if l1 > l_pi * dx + 1e-12 {
                            return Err(Error::Config(format!(
                                "policy varies faster than L_pi = {l_pi} at ({t}, {s}, {j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Action indices if the policy is deterministic everywhere.
    pub fn as_actions(&self) -> Option<Vec<Vec<Vec<usize>>>> {
        self.stages
            .iter()
            .map(|st| {
                st.iter()
                    .map(|row| {
                        row.iter()
                            .map(|d| match d {
                                Decision::Action(a) => Some(*a),
                                Decision::Mixed(_) => None,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}
