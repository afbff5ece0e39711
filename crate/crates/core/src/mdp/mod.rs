//! Finite-horizon tabular MDPs and backward induction on the augmented state `(s, x)`.

mod dp;
mod model;
mod moduli;
mod table;
mod xgrid;

pub use dp::{
    augmented_cost, dp_evaluate, dp_optimize, optimal_risk, policy_risk, OptimalRisk,
};
pub use model::FiniteHorizonMdp;
pub use moduli::{eval_modulus, opt_modulus};
pub use table::{AugPolicy, Decision, ValueTable};
pub use xgrid::{StageNodes, XGrid, XMode};
