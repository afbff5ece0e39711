use crate::error::{Error, Result};

/// Finite-horizon tabular MDP over stages `0..=T`.
///
/// Stage `t < T` has transition kernels `P_t(s'|s, a)` into stage `t + 1`; every
/// stage, including `T`, charges a cost `c_t(s, a) ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteHorizonMdp {
    horizon: usize,
    n_states: Vec<usize>,
    n_actions: Vec<usize>,
    kernels: Vec<Vec<Vec<Vec<f64>>>>,
    costs: Vec<Vec<Vec<f64>>>,
}

impl FiniteHorizonMdp {
    /// `kernels[t][s][a][s']` for `t < T`, `costs[t][s][a]` for `t ≤ T`.
    pub fn new(kernels: Vec<Vec<Vec<Vec<f64>>>>, costs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::with_cost_cap(kernels, costs, 1.0)
    }

    /// As [`FiniteHorizonMdp::new`] with costs bounded by `cap` instead of 1.
    pub(crate) fn with_cost_cap(
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
        costs: Vec<Vec<Vec<f64>>>,
        cap: f64,
    ) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::Input("MDP needs at least one stage".into()));
        }
        let horizon = costs.len() - 1;
        if kernels.len() != horizon {
            return Err(Error::Input(format!(
                "expected {horizon} transition stages, found {}",
                kernels.len()
            )));
        }
        let mut n_states = Vec::with_capacity(horizon + 1);
        let mut n_actions = Vec::with_capacity(horizon + 1);
        for (t, stage) in costs.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::Input(format!("stage {t} has no states")));
            }
            let na = stage[0].len();
            if na == 0 {
                return Err(Error::Input(format!("stage {t} has no actions")));
            }
            for (s, row) in stage.iter().enumerate() {
                if row.len() != na {
                    return Err(Error::Input(format!(
                        "stage {t}, state {s}: expected {na} action costs, found {}",
                        row.len()
                    )));
                }
                for (a, &c) in row.iter().enumerate() {
                    if !(c >= 0.0 && c <= cap) {
                        return Err(Error::Input(format!(
                            "cost c_{t}({s}, {a}) = {c} lies outside [0, {cap}]"
                        )));
                    }
                }
            }
            n_states.push(stage.len());
            n_actions.push(na);
        }
        for (t, stage) in kernels.iter().enumerate() {
            if stage.len() != n_states[t] {
                return Err(Error::Input(format!(
                    "stage {t} kernel covers {} states, expected {}",
                    stage.len(),
                    n_states[t]
                )));
            }
            for (s, per_action) in stage.iter().enumerate() {
                if per_action.len() != n_actions[t] {
                    return Err(Error::Input(format!(
                        "stage {t}, state {s}: kernel covers {} actions, expected {}",
                        per_action.len(),
                        n_actions[t]
                    )));
                }
                for (a, row) in per_action.iter().enumerate() {
                    check_row(row, n_states[t + 1])
                        .map_err(|e| Error::Input(format!("P_{t}(·|{s}, {a}): {e}")))?;
                }
            }
        }
        Ok(Self {
            horizon,
            n_states,
            n_actions,
            kernels,
            costs,
        })
    }

    /// Same state and action sets at every stage; the kernel and cost are repeated.
    pub fn stationary(
        horizon: usize,
        kernel: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(vec![kernel; horizon], vec![cost; horizon + 1])
    }

    /// Index `T` of the last stage.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self, t: usize) -> usize {
        self.n_states[t]
    }

    pub fn n_actions(&self, t: usize) -> usize {
        self.n_actions[t]
    }

    pub fn max_states(&self) -> usize {
        self.n_states.iter().copied().max().unwrap_or(0)
    }

    pub fn max_actions(&self) -> usize {
        self.n_actions.iter().copied().max().unwrap_or(0)
    }

    pub fn cost(&self, t: usize, s: usize, a: usize) -> f64 {
        self.costs[t][s][a]
    }

    pub fn costs(&self) -> &[Vec<Vec<f64>>] {
        &self.costs
    }

    pub fn kernels(&self) -> &[Vec<Vec<Vec<f64>>>] {
        &self.kernels
    }

    pub fn kernel_row(&self, t: usize, s: usize, a: usize) -> &[f64] {
        &self.kernels[t][s][a]
    }

    pub fn max_cost(&self, t: usize) -> f64 {
        self.costs[t]
            .iter()
            .flat_map(|row| row.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Largest attainable accumulated cost before stage `t`: `Σ_{τ<t} max c_τ`.
    pub fn accumulated_bound(&self, t: usize) -> f64 {
        (0..t).map(|tau| self.max_cost(tau)).sum()
    }

    /// Upper bound on the total cost, `Σ_t max c_t`.
    pub fn cost_bound(&self) -> f64 {
        self.accumulated_bound(self.horizon + 1)
    }

    pub fn is_deterministic(&self) -> bool {
        self.kernels
            .iter()
            .flatten()
            .flatten()
            .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Copy of the model with replaced transition kernels (costs unchanged).
    pub fn with_kernels(&self, kernels: Vec<Vec<Vec<Vec<f64>>>>) -> Result<Self> {
        Self::with_cost_cap(kernels, self.costs.clone(), f64::INFINITY)
    }

    /// Copy of the model with every stage-`t` cost multiplied by `factors[t]`.
    pub fn with_cost_factors(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.horizon + 1 {
            return Err(Error::Config("cost factors must cover every stage".into()));
        }
        let costs = self
            .costs
            .iter()
            .zip(factors)
            .map(|(stage, &g)| {
                stage
                    .iter()
                    .map(|row| row.iter().map(|c| c * g).collect())
                    .collect()
            })
            .collect();
        Self::new(self.kernels.clone(), costs)
    }
}

fn check_row(row: &[f64], n_next: usize) -> std::result::Result<(), String> {
    if row.len() != n_next {
        return Err(format!("row has {} entries, expected {n_next}", row.len()));
    }
    let mut total = 0.0;
    for &p in row {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(format!("entry {p} is not a probability"));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("row sums to {total}"));
    }
    Ok(())
}
