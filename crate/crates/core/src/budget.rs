use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// An `(epsilon, delta)` privacy budget.
///
/// Pure mechanisms accept a budget and ignore `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(invalid("epsilon", format!("must be positive and finite, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(invalid("delta", format!("must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Sequential composition of `times` copies of this budget.
    pub fn scaled(&self, times: u32) -> Self {
        let t = f64::from(times);
        Self {
            epsilon: self.epsilon * t,
            delta: (self.delta * t).min(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(PrivacyBudget::new(0.0, 0.0).is_err());
        assert!(PrivacyBudget::new(-1.0, 0.0).is_err());
        assert!(PrivacyBudget::new(f64::INFINITY, 0.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.5).is_err());
        assert!(PrivacyBudget::new(1.0, -0.1).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn scaling_composes() {
        let b = PrivacyBudget::new(0.5, 1e-6).unwrap().scaled(3);
        assert_eq!(b.epsilon(), 1.5);
        assert!((b.delta() - 3e-6).abs() < 1e-18);
    }
}
