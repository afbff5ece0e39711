//! JSON problem files.
//!
//! Three shapes share the `risk` and `xgrid` blocks:
//!
//! - finite MDP: `T`, `kernels[t][s][a][s']`, `costs[t][s][a]`;
//! - discounted MDP: `kernel[s][a][s']`, `cost[s][a]`, `gamma`;
//! - control problem: boxes, dynamics, cost, noise, `L` and `grids`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::horizon::InfiniteMdp;
use crate::mdp::{FiniteHorizonMdp, XMode};
use crate::risk::{PhiSpec, RiskFamily, ThetaBox};
use crate::soc::{BoxDomain, Dynamics, Scenario, SocCost, SocProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RiskSpec {
    Cvar {
        alpha: f64,
        /// `[lo, hi]` for θ; defaults to `[0, B]` with `B` the total-cost bound.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_box: Option<[f64; 2]>,
    },
    Phi {
        /// `kl`, `chi2` or `tv`.
        phi: String,
        tau: f64,
        /// Density cap; `null` or absent for the untruncated dual.
        #[serde(rename = "L", default)]
        trunc_l: Option<f64>,
        /// `[[λ_lo, λ_hi], [μ_lo, μ_hi]]`; defaults to `[[1e-4, 10], [−B, B]]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_box: Option<[[f64; 2]; 2]>,
    },
}

impl RiskSpec {
    pub fn to_family(&self, cost_bound: f64) -> Result<RiskFamily> {
        match self {
            RiskSpec::Cvar { alpha, theta_box } => match theta_box {
                Some([lo, hi]) => RiskFamily::cvar(*alpha, ThetaBox::new(vec![*lo], vec![*hi])?),
                None => RiskFamily::cvar_default(*alpha, cost_bound),
            },
            RiskSpec::Phi {
                phi,
                tau,
                trunc_l,
                theta_box,
            } => {
                let phi = PhiSpec::from_name(phi)?;
                let l = trunc_l.unwrap_or(f64::INFINITY);
                match theta_box {
                    Some([lam, mu]) => {
                        RiskFamily::phi_dual(phi, *tau, l, ThetaBox::new(vec![lam[0], mu[0]], vec![lam[1], mu[1]])?)
                    }
                    None => RiskFamily::phi_dual_default(phi, *tau, l, cost_bound),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum XGridSpec {
    Lattice {
        #[serde(rename = "K")]
        k: u32,
    },
    Uniform {
        h: f64,
    },
}

impl XGridSpec {
    pub fn to_mode(self) -> XMode {
        match self {
            XGridSpec::Lattice { k } => XMode::Lattice { k },
            XGridSpec::Uniform { h } => XMode::Uniform { h },
        }
    }

    /// Parses `lattice:K` or `uniform:h`.
    pub fn parse(text: &str) -> Result<Self> {
        let (mode, value) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("x-grid `{text}` is not of the form mode:value")))?;
        let bad = || Error::Config(format!("x-grid value in `{text}` is invalid"));
        match mode {
            "lattice" => Ok(XGridSpec::Lattice {
                k: value.parse().map_err(|_| bad())?,
            }),
            "uniform" => Ok(XGridSpec::Uniform {
                h: value.parse().map_err(|_| bad())?,
            }),
            _ => Err(Error::Config(format!("unknown x-grid mode `{mode}`"))),
        }
    }
}

fn check_labels(labels: &Option<Vec<String>>, count: usize, what: &str) -> Result<()> {
    match labels {
        Some(l) if l.len() != count => Err(Error::Config(format!(
            "{} {what} labels given but the tables have {count}",
            l.len()
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteProblemFile {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default)]
    pub states: Option<Vec<String>>,
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    pub kernels: Vec<Vec<Vec<Vec<f64>>>>,
    pub costs: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub risk: Option<RiskSpec>,
    #[serde(default)]
    pub xgrid: Option<XGridSpec>,
    /// Initial state index (default 0).
    #[serde(default)]
    pub s0: usize,
}

impl FiniteProblemFile {
    pub fn to_mdp(&self) -> Result<FiniteHorizonMdp> {
        if self.kernels.len() != self.horizon || self.costs.len() != self.horizon + 1 {
            return Err(Error::Config(format!(
                "T = {} needs {} kernel stages and {} cost stages",
                self.horizon,
                self.horizon,
                self.horizon + 1
            )));
        }
        let mdp = FiniteHorizonMdp::new(self.kernels.clone(), self.costs.clone())?;
        check_labels(&self.states, mdp.max_states(), "state")?;
        check_labels(&self.actions, mdp.max_actions(), "action")?;
        Ok(mdp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfiniteProblemFile {
    #[serde(default)]
    pub states: Option<Vec<String>>,
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub cost: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub risk: Option<RiskSpec>,
    #[serde(default)]
    pub xgrid: Option<XGridSpec>,
    #[serde(default)]
    pub s0: usize,
}

impl InfiniteProblemFile {
    pub fn to_mdp(&self, gamma_override: Option<f64>) -> Result<InfiniteMdp> {
        let gamma = gamma_override
            .or(self.gamma)
            .ok_or_else(|| Error::Config("no discount factor given".into()))?;
        let inf = InfiniteMdp::new(self.kernel.clone(), self.cost.clone(), gamma)?;
        check_labels(&self.states, inf.n_states(), "state")?;
        check_labels(&self.actions, inf.n_actions(), "action")?;
        Ok(inf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DynamicsSpec {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        #[serde(default = "default_true")]
        clamp: bool,
    },
    Tabulated {
        next: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CostSpec {
    Constant { c: f64 },
    Quadratic { q_s: Vec<f64>, q_a: Vec<f64> },
    Tabulated { values: Vec<Vec<Vec<f64>>> },
}

/// A noise value: a scalar for one-dimensional states, otherwise a vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl NoiseValue {
    fn to_vec(&self) -> Vec<f64> {
        match self {
            NoiseValue::Scalar(v) => vec![*v],
            NoiseValue::Vector(v) => v.clone(),
        }
    }
}

/// `[[ξ, p], ...]` shared by all stages, or one such list per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    PerStage(Vec<Vec<(NoiseValue, f64)>>),
    Shared(Vec<(NoiseValue, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocGridSpec {
    #[serde(rename = "hS")]
    pub h_s: f64,
    #[serde(rename = "hA")]
    pub h_a: f64,
    pub xgrid: XGridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocProblemFile {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub state_box: Vec<[f64; 2]>,
    pub action_box: Vec<[f64; 2]>,
    pub dynamics: DynamicsSpec,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub grids: SocGridSpec,
    /// Per-stage cost multipliers (default all 1).
    #[serde(default)]
    pub cost_scale: Option<Vec<f64>>,
    #[serde(default)]
    pub risk: Option<RiskSpec>,
    /// Initial state (default: the lower corner of the state box).
    #[serde(default)]
    pub s0: Option<Vec<f64>>,
}

fn to_box(b: &[[f64; 2]]) -> Result<BoxDomain> {
    BoxDomain::new(b.iter().map(|r| r[0]).collect(), b.iter().map(|r| r[1]).collect())
}

impl SocProblemFile {
    pub fn to_problem(&self) -> Result<SocProblem> {
        let scenarios = |set: &[(NoiseValue, f64)]| -> Vec<Scenario> {
            set.iter()
                .map(|(xi, p)| Scenario { xi: xi.to_vec(), p: *p })
                .collect()
        };
        let noise = match &self.noise {
            NoiseSpec::Shared(set) => vec![scenarios(set); self.horizon],
            NoiseSpec::PerStage(sets) => sets.iter().map(|s| scenarios(s)).collect(),
        };
        let problem = SocProblem {
            horizon: self.horizon,
            state_box: to_box(&self.state_box)?,
            action_box: to_box(&self.action_box)?,
            dynamics: match &self.dynamics {
                DynamicsSpec::Linear { a, b, clamp } => Dynamics::Linear {
                    a: a.clone(),
                    b: b.clone(),
                    clamp: *clamp,
                },
                DynamicsSpec::Tabulated { next } => Dynamics::Tabulated { next: next.clone() },
            },
            cost: match &self.cost {
                CostSpec::Constant { c } => SocCost::Constant(*c),
                CostSpec::Quadratic { q_s, q_a } => SocCost::Quadratic {
                    q_s: q_s.clone(),
                    q_a: q_a.clone(),
                },
                CostSpec::Tabulated { values } => SocCost::Tabulated { values: values.clone() },
            },
            noise,
            cost_scale: self.cost_scale.clone().unwrap_or_else(|| vec![1.0; self.horizon + 1]),
            lipschitz: self.lipschitz,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.s0
            .clone()
            .unwrap_or_else(|| self.state_box.iter().map(|r| r[0]).collect())
    }
}

/// Two-action instance in problem-file form.
pub fn two_action_file() -> FiniteProblemFile {
    let m = crate::instances::two_action();
    FiniteProblemFile {
        horizon: m.horizon(),
        states: Some(crate::instances::TWO_ACTION_STATES.iter().map(|s| s.to_string()).collect()),
        actions: Some(crate::instances::TWO_ACTION_ACTIONS.iter().map(|s| s.to_string()).collect()),
        kernels: m.kernels().to_vec(),
        costs: m.costs().to_vec(),
        risk: Some(RiskSpec::Cvar {
            alpha: 0.5,
            theta_box: None,
        }),
        xgrid: Some(XGridSpec::Lattice { k: 5 }),
        s0: 0,
    }
}
