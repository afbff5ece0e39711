//! Risk-averse dynamic programming over an accumulated-cost augmented state.
//!
//! A static risk functional `min_θ E[f_θ(total cost)]` does not decompose
//! stage by stage. Appending the accumulated cost `x` to the state and charging
//! `f_θ(x + c) − f_θ(x)` per stage makes the sum telescope to
//! `f_θ(total) − f_θ(0)`, so ordinary backward induction applies on `(s, x)`.
//!
//! Modules:
//!
//! - [`risk`]: the `f_θ` families (CVaR and truncated φ-divergence duals),
//!   conjugates, and minimization over `θ`.
//! - [`mdp`]: finite-horizon tabular MDPs, x-grids, and the augmented DP.
//! - [`horizon`]: discounted infinite-horizon problems via truncation and
//!   Bellman-residual checks of the scaled fixed-point operators.
//! - [`soc`]: finite-horizon stochastic optimal control on state/action grids.
//! - [`sampling`]: generative-model sampling, empirical kernels, rate sweeps and
//!   explicit sample-size formulas.
//! - [`oracle`]: brute-force ground truth for small instances.
//! - [`problem`]: JSON problem-file schemas.
//! - [`instances`]: small reference instances used by tests and the CLI.

pub mod error;
pub mod horizon;
pub mod instances;
pub mod mdp;
pub mod oracle;
pub mod problem;
pub mod risk;
pub mod sampling;
pub mod search;
pub mod soc;

pub use error::{Error, Result};
