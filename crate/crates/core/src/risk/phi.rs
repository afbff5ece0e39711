//! Divergence generators φ and the conjugate of the truncated, scaled generator.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::search::golden_section_max;

/// Smallest admissible dual multiplier on the divergence budget.
pub const LAMBDA_MIN: f64 = 1e-4;

/// Tolerance of the golden-section conjugate for custom generators.
pub const CONJUGATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    /// `φ(w) = w ln w − w + 1`
    KullbackLeibler,
    /// `φ(w) = (w − 1)²`
    ChiSquared,
    /// `φ(w) = |w − 1|`
    TotalVariation,
    Custom,
}

type PhiFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A convex divergence generator on `[0, ∞)`, minimized at 1, `+∞` for negative arguments.
#[derive(Clone)]
pub struct PhiSpec {
    kind: PhiKind,
    name: String,
    custom: Option<PhiFn>,
    superlinear: bool,
}

impl fmt::Debug for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiSpec")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("superlinear", &self.superlinear)
            .finish()
    }
}

impl PhiSpec {
    pub fn kl() -> Self {
        Self {
            kind: PhiKind::KullbackLeibler,
            name: "kl".into(),
            custom: None,
            superlinear: true,
        }
    }

    pub fn chi_squared() -> Self {
        Self {
            kind: PhiKind::ChiSquared,
            name: "chi2".into(),
            custom: None,
            superlinear: true,
        }
    }

    pub fn total_variation() -> Self {
        Self {
            kind: PhiKind::TotalVariation,
            name: "tv".into(),
            custom: None,
            superlinear: false,
        }
    }

    /// A user-supplied generator. Convexity and the minimum at 1 are checked on probes.
    pub fn custom<F>(name: &str, phi: F, superlinear: bool) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let spec = Self {
            kind: PhiKind::Custom,
            name: name.to_string(),
            custom: Some(Arc::new(phi)),
            superlinear,
        };
        spec.check_shape()?;
        Ok(spec)
    }

    /// Parses the short identifiers used in problem files: `kl`, `chi2`, `tv`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::kl()),
            "chi2" | "chi-squared" | "chisquared" => Ok(Self::chi_squared()),
            "tv" | "total-variation" => Ok(Self::total_variation()),
            other => Err(Error::Config(format!("unknown divergence '{other}'"))),
        }
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn superlinear(&self) -> bool {
        self.superlinear
    }

    pub fn eval(&self, w: f64) -> f64 {
        if w < 0.0 {
            return f64::INFINITY;
        }
        match self.kind {
            PhiKind::KullbackLeibler => {
                if w == 0.0 {
                    1.0
                } else {
                    // (1 + e) ln(1 + e) − e keeps precision near w = 1
                    let e = w - 1.0;
                    (w * e.ln_1p() - e).max(0.0)
                }
            }
            PhiKind::ChiSquared => (w - 1.0) * (w - 1.0),
            PhiKind::TotalVariation => (w - 1.0).abs(),
            PhiKind::Custom => (self.custom.as_ref().expect("custom generator"))(w),
        }
    }

    /// Largest value of φ on `[0, l]`; attained at an endpoint by convexity.
    pub fn max_on(&self, l: f64) -> f64 {
        self.eval(0.0).max(self.eval(l))
    }

    /// Midpoint convexity on probe triples and minimum at 1.
    pub fn check_shape(&self) -> Result<()> {
        let probes: Vec<f64> = (0..=60).map(|i| i as f64 * 0.1).collect();
        let at_one = self.eval(1.0);
        for (i, &a) in probes.iter().enumerate() {
            let fa = self.eval(a);
            if !fa.is_finite() {
                return Err(Error::Input(format!("φ({a}) is not finite")));
            }
            if fa < at_one - 1e-12 {
                return Err(Error::Input(format!(
                    "φ is not minimized at 1: φ({a}) = {fa} < φ(1) = {at_one}"
                )));
            }
            for &b in &probes[i + 1..] {
                let mid = self.eval(0.5 * (a + b));
                if mid > 0.5 * (fa + self.eval(b)) + 1e-9 {
                    return Err(Error::Input(format!(
                        "φ fails midpoint convexity on [{a}, {b}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `(λ φ_L)*(y) = sup_{0 ≤ w ≤ L} w·y − λ φ(w)`.
///
/// `l` may be `f64::INFINITY` for the untruncated conjugate; the result is then
/// `+∞` whenever the supremum is unbounded.
pub fn conjugate_truncated(phi: &PhiSpec, lambda: f64, l: f64, y: f64) -> Result<f64> {
    if !(lambda >= LAMBDA_MIN) {
        return Err(Error::Domain(format!(
            "divergence multiplier {lambda} is below the floor {LAMBDA_MIN}"
        )));
    }
    if !(l > 0.0) {
        return Err(Error::Domain(format!("truncation level {l} must be positive")));
    }
    if !y.is_finite() {
        return Err(Error::Input(format!("conjugate argument {y} is not finite")));
    }
    Ok(conjugate_unchecked(phi, lambda, l, y))
}

pub(crate) fn conjugate_unchecked(phi: &PhiSpec, lambda: f64, l: f64, y: f64) -> f64 {
    let objective = |w: f64| w * y - lambda * phi.eval(w);
    match phi.kind {
        PhiKind::KullbackLeibler => {
            // Stationary point ln w = y/λ.
            let r = y / lambda;
            if l.is_infinite() || r <= l.ln() {
                lambda * r.exp_m1()
            } else {
                objective(l)
            }
        }
        PhiKind::ChiSquared => {
            let w = (1.0 + y / (2.0 * lambda)).max(0.0);
            if l.is_infinite() || w <= l {
                objective(w)
            } else {
                objective(l)
            }
        }
        PhiKind::TotalVariation => {
            let mut best = objective(0.0).max(objective(1.0_f64.min(l)));
            if l.is_infinite() {
                if y > lambda {
                    return f64::INFINITY;
                }
            } else {
                best = best.max(objective(l));
            }
            best
        }
        PhiKind::Custom => {
            if l.is_infinite() {
                return f64::NAN;
            }
            let (_, interior) = golden_section_max(objective, 0.0, l, CONJUGATE_TOL, 400);
            interior.max(objective(0.0)).max(objective(l))
        }
    }
}
