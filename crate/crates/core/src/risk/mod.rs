//! Risk-functional families `f_θ` and their parameter sets.
//!
//! A family defines the static risk `R(X) = min_{θ∈Θ} E[f_θ(X)]`:
//!
//! - CVaR at level α: `f_θ(z) = θ + [z − θ]_+ / α`.
//! - Truncated φ-divergence dual with `θ = (λ, μ)`:
//!   `f_θ(z) = λτ + μ + (λ φ_L)*(z − μ)`, where `φ_L` is φ restricted to `[0, L]`.

mod dist;
mod phi;
mod theta;

pub use dist::DiscreteDist;
pub use phi::{conjugate_truncated, PhiKind, PhiSpec, CONJUGATE_TOL, LAMBDA_MIN};
pub use theta::{risk_of_distribution, risk_on_grid, ThetaGrid, DEFAULT_POINTS_PER_AXIS};

use crate::error::{Error, Result};

/// Upper end of the default λ range of the φ-divergence dual.
pub const LAMBDA_MAX_DEFAULT: f64 = 10.0;

/// Axis-aligned bounds of the parameter set Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Config("θ box bounds have mismatched lengths".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::Config(format!("θ box interval [{l}, {h}] is invalid")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lo.len()
            && theta
                .iter()
                .enumerate()
                .all(|(k, &t)| t >= self.lo[k] - 1e-12 && t <= self.hi[k] + 1e-12)
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
}

#[derive(Debug, Clone)]
pub enum RiskKind {
    CVaR { alpha: f64 },
    PhiDual { phi: PhiSpec, tau: f64, trunc_l: f64 },
}

/// A family `f_θ` together with its parameter box.
#[derive(Debug, Clone)]
pub struct RiskFamily {
    kind: RiskKind,
    theta_box: ThetaBox,
}

impl RiskFamily {
    /// CVaR at level `alpha ∈ (0, 1]`; `alpha = 1` is the expectation.
    pub fn cvar(alpha: f64, theta_box: ThetaBox) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("CVaR level {alpha} must lie in (0, 1]")));
        }
        if theta_box.dim() != 1 {
            return Err(Error::Config("CVaR expects a one-dimensional θ box".into()));
        }
        Ok(Self {
            kind: RiskKind::CVaR { alpha },
            theta_box,
        })
    }

    /// CVaR with Θ = `[0, cost_bound]`, the range of the total cost.
    pub fn cvar_default(alpha: f64, cost_bound: f64) -> Result<Self> {
        Self::cvar(alpha, ThetaBox::new(vec![0.0], vec![cost_bound.max(0.0)])?)
    }

    /// Truncated φ-divergence dual. `trunc_l = ∞` gives the untruncated dual,
    /// whose Lipschitz constant in `z` is infinite.
    pub fn phi_dual(phi: PhiSpec, tau: f64, trunc_l: f64, theta_box: ThetaBox) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("divergence budget {tau} must be ≥ 0")));
        }
        if !(trunc_l > 1.0) {
            return Err(Error::Config(format!("truncation level {trunc_l} must exceed 1")));
        }
        if theta_box.dim() != 2 {
            return Err(Error::Config("φ-divergence dual expects a two-dimensional θ box".into()));
        }
        if theta_box.lo[0] < LAMBDA_MIN {
            return Err(Error::Config(format!(
                "λ lower bound {} is below the floor {LAMBDA_MIN}",
                theta_box.lo[0]
            )));
        }
        Ok(Self {
            kind: RiskKind::PhiDual { phi, tau, trunc_l },
            theta_box,
        })
    }

    /// φ-divergence dual with Θ = `[λ_min, 10] × [−B, B]`, `B = cost_bound`.
    pub fn phi_dual_default(phi: PhiSpec, tau: f64, trunc_l: f64, cost_bound: f64) -> Result<Self> {
        let b = cost_bound.max(0.0);
        let theta_box = ThetaBox::new(vec![LAMBDA_MIN, -b], vec![LAMBDA_MAX_DEFAULT, b])?;
        Self::phi_dual(phi, tau, trunc_l, theta_box)
    }

    pub fn kind(&self) -> &RiskKind {
        &self.kind
    }

    pub fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    pub fn with_theta_box(&self, theta_box: ThetaBox) -> Result<Self> {
        match &self.kind {
            RiskKind::CVaR { alpha } => Self::cvar(*alpha, theta_box),
            RiskKind::PhiDual { phi, tau, trunc_l } => {
                Self::phi_dual(phi.clone(), *tau, *trunc_l, theta_box)
            }
        }
    }

    pub fn is_cvar(&self) -> bool {
        matches!(self.kind, RiskKind::CVaR { .. })
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            RiskKind::CVaR { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_box.dim()
    }

    /// Lipschitz constant of `z ↦ f_θ(z)`.
    pub fn l_c(&self) -> f64 {
        match &self.kind {
            RiskKind::CVaR { alpha } => 1.0 / alpha,
            RiskKind::PhiDual { trunc_l, .. } => *trunc_l,
        }
    }

    /// Lipschitz constant of `θ ↦ f_θ(z)` over the box.
    ///
    /// For the dual, `∂_λ f = τ − φ(w*)` and `∂_μ f = 1 − w*` with `w* ∈ [0, L]`.
    pub fn l_theta(&self) -> f64 {
        match &self.kind {
            RiskKind::CVaR { alpha } => 1.0 / alpha,
            RiskKind::PhiDual { phi, tau, trunc_l } => {
                let g_lambda = tau.max(phi.max_on(*trunc_l));
                let g_mu = 1.0_f64.max(trunc_l - 1.0);
                g_lambda.hypot(g_mu)
            }
        }
    }

    pub fn r_theta(&self) -> f64 {
        self.theta_box.radius()
    }

    /// True when the family obeys `f_θ(γx) = γ f_{θ/γ}(x)` with a finite Lipschitz constant.
    pub fn supports_scaling(&self) -> bool {
        self.l_c().is_finite()
    }

    /// `f_θ(z)` with θ checked against the box.
    pub fn eval(&self, theta: &[f64], z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::Input(format!("argument {z} is not finite")));
        }
        if !self.theta_box.contains(theta) {
            return Err(Error::Domain(format!("θ = {theta:?} lies outside the parameter box")));
        }
        if let RiskKind::PhiDual { .. } = self.kind {
            if theta[0] < LAMBDA_MIN {
                return Err(Error::Domain(format!("λ = {} is below the floor", theta[0])));
            }
        }
        Ok(self.eval_unchecked(theta, z))
    }

    /// `f_θ(z)` by formula, for any θ (used for scaled parameters outside the box).
    pub fn eval_unchecked(&self, theta: &[f64], z: f64) -> f64 {
        match &self.kind {
            RiskKind::CVaR { alpha } => {
                let t = theta[0];
                t + (z - t).max(0.0) / alpha
            }
            RiskKind::PhiDual { phi, tau, trunc_l } => {
                let (lambda, mu) = (theta[0], theta[1]);
                lambda * tau + mu + phi::conjugate_unchecked(phi, lambda, *trunc_l, z - mu)
            }
        }
    }

    /// Short human-readable label, e.g. `cvar(0.5)` or `phi(kl,τ=0.1,L=10)`.
    pub fn label(&self) -> String {
        match &self.kind {
            RiskKind::CVaR { alpha } => format!("cvar({alpha})"),
            RiskKind::PhiDual { phi, tau, trunc_l } => {
                format!("phi({},τ={tau},L={trunc_l})", phi.name())
            }
        }
    }
}

/// `max_x |f_θ(γx) − γ f_{θ/γ}(x)|` over the probes.
pub fn check_scaling(family: &RiskFamily, theta: &[f64], gamma: f64, probes: &[f64]) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("scaling factor {gamma} must lie in (0, 1]")));
    }
    if theta.len() != family.theta_dim() {
        return Err(Error::Domain("θ has the wrong dimension".into()));
    }
    let scaled: Vec<f64> = theta.iter().map(|t| t / gamma).collect();
    let mut worst: f64 = 0.0;
    for &x in probes {
        if !x.is_finite() {
            return Err(Error::Input(format!("probe {x} is not finite")));
        }
        let lhs = family.eval_unchecked(theta, gamma * x);
        let rhs = gamma * family.eval_unchecked(&scaled, x);
        let r = (lhs - rhs).abs();
        worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ThetaBox {
        ThetaBox::new(vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn cvar_formula_examples() {
        let f = RiskFamily::cvar(0.5, unit_box()).unwrap();
        assert!((f.eval(&[0.2], 0.7).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(f.eval(&[0.5], 0.5).unwrap(), 0.5);
        assert_eq!(f.l_c(), 2.0);
        assert_eq!(f.l_theta(), 2.0);
    }

    #[test]
    fn eval_checks_domain_and_input() {
        let f = RiskFamily::cvar(0.5, unit_box()).unwrap();
        assert!(matches!(f.eval(&[1.5], 0.0), Err(Error::Domain(_))));
        assert!(matches!(f.eval(&[0.5], f64::NAN), Err(Error::Input(_))));
        assert!(RiskFamily::cvar(0.0, unit_box()).is_err());
        assert!(RiskFamily::cvar(1.2, unit_box()).is_err());
    }

    #[test]
    fn kl_dual_matches_dense_grid() {
        let b = ThetaBox::new(vec![LAMBDA_MIN, -2.0], vec![10.0, 2.0]).unwrap();
        let f = RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 10.0, b).unwrap();
        let v = f.eval(&[1.0, 0.0], 0.5).unwrap();
        let phi = PhiSpec::kl();
        let step = 1e-6;
        let oracle = (0..=10_000_000)
            .map(|i| {
                let w = i as f64 * step;
                0.5 * w - phi.eval(w)
            })
            .fold(f64::NEG_INFINITY, f64::max)
            + 0.1;
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
    }

    #[test]
    fn phi_dual_validation() {
        let b = ThetaBox::new(vec![LAMBDA_MIN, -1.0], vec![10.0, 1.0]).unwrap();
        assert!(RiskFamily::phi_dual(PhiSpec::kl(), -0.1, 10.0, b.clone()).is_err());
        assert!(RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 1.0, b.clone()).is_err());
        let low = ThetaBox::new(vec![0.0, -1.0], vec![10.0, 1.0]).unwrap();
        assert!(RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 10.0, low).is_err());
        let f = RiskFamily::phi_dual(PhiSpec::kl(), 0.1, f64::INFINITY, b).unwrap();
        assert!(!f.supports_scaling());
    }

    #[test]
    fn scaling_residuals() {
        let f = RiskFamily::cvar(0.5, unit_box()).unwrap();
        assert!(check_scaling(&f, &[0.4], 0.9, &[1.0]).unwrap() <= 1e-15);
        assert_eq!(check_scaling(&f, &[0.4], 1.0, &[0.0, 0.3, 2.0]).unwrap(), 0.0);
        let b = ThetaBox::new(vec![LAMBDA_MIN, -2.0], vec![10.0, 2.0]).unwrap();
        let g = RiskFamily::phi_dual(PhiSpec::kl(), 0.1, 10.0, b).unwrap();
        let r = check_scaling(&g, &[1.0, 0.2], 0.5, &[0.7]).unwrap();
        assert!(r <= CONJUGATE_TOL, "{r}");
        assert!(check_scaling(&g, &[1.0, 0.2], 0.0, &[0.7]).is_err());
    }

    #[test]
    fn radius_of_box() {
        let b = ThetaBox::new(vec![-3.0, 0.0], vec![1.0, 4.0]).unwrap();
        assert_eq!(b.radius(), 5.0);
    }
}
