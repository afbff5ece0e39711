use crate::error::{Error, Result};

/// A finitely supported distribution of a real random variable.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    /// Builds a distribution from `(value, probability)` pairs.
    ///
    /// Probabilities must be non-negative and sum to one within `1e-12`; values must be finite.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Input("distribution has no atoms".into()));
        }
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() {
                return Err(Error::Input(format!("atom value {v} is not finite")));
            }
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Input(format!("atom probability {p} is invalid")));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Input(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms })
    }

    pub fn point(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    pub fn min_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mass() {
        assert!(DiscreteDist::new(vec![(0.0, 0.5), (1.0, 0.4)]).is_err());
        assert!(DiscreteDist::new(vec![(0.0, -0.5), (1.0, 1.5)]).is_err());
        assert!(DiscreteDist::new(vec![(f64::NAN, 1.0)]).is_err());
        assert!(DiscreteDist::new(vec![]).is_err());
    }

    #[test]
    fn mean_of_fair_coin() {
        let d = DiscreteDist::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_eq!(d.mean(), 0.5);
        assert_eq!(d.max_value(), 1.0);
    }
}
