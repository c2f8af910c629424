use rand::Rng;
use serde::{Deserialize, Serialize};

use super::laplace::sample_laplace;
use super::{SensitivityBound, SensitivityKind};
use crate::budget::PrivacyBudget;
use crate::error::{invalid, Error, Result};

/// Number of records that must change before local sensitivity may exceed
/// the proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Distance {
    Finite(u64),
    /// No dataset exceeds the proposal, e.g. for a constant statistic.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PtrOutcome {
    Released {
        value: f64,
        noise: f64,
        noise_scale: f64,
        noisy_distance: f64,
        threshold: f64,
    },
    Fallback {
        noisy_distance: f64,
        threshold: f64,
    },
}

impl PtrOutcome {
    pub fn is_fallback(&self) -> bool {
        matches!(self, PtrOutcome::Fallback { .. })
    }
}

/// Propose-test-release.
///
/// Releases `mechanism(dataset) + Lap(lambda / epsilon)` if the distance to the
/// nearest dataset with local sensitivity above `lambda`, plus `Lap(1/epsilon)`,
/// clears `ln(1/delta) / epsilon`. `distance` must return a lower bound on that
/// distance which itself changes by at most 1 between neighbours.
pub fn propose_test_release<D, R, M, F>(
    dataset: &D,
    mechanism: M,
    lambda: &SensitivityBound,
    distance: F,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<PtrOutcome>
where
    D: ?Sized,
    R: Rng + ?Sized,
    M: FnOnce(&D) -> f64,
    F: FnOnce(&D, f64) -> Distance,
{
    if budget.delta() <= 0.0 {
        return Err(Error::DeltaRequired("propose-test-release"));
    }
    if lambda.kind() != SensitivityKind::LocalProposed {
        return Err(invalid("lambda", "propose-test-release expects a proposed local bound"));
    }
    let eps = budget.epsilon();
    let threshold = (1.0 / budget.delta()).ln() / eps;
    let noisy_distance = match distance(dataset, lambda.value()) {
        Distance::Unbounded => f64::INFINITY,
        Distance::Finite(k) => k as f64 + sample_laplace(1.0 / eps, rng),
    };
    if noisy_distance < threshold {
        return Ok(PtrOutcome::Fallback {
            noisy_distance,
            threshold,
        });
    }
    let noise_scale = lambda.value() / eps;
    let noise = if noise_scale == 0.0 { 0.0 } else { sample_laplace(noise_scale, rng) };
    Ok(PtrOutcome::Released {
        value: mechanism(dataset) + noise,
        noise,
        noise_scale,
        noisy_distance,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::NeighbourRelation;
    use crate::rng::RandomSource;

    fn lambda(v: f64) -> SensitivityBound {
        SensitivityBound::local_proposed(v, NeighbourRelation::UserLevelPrivateK).unwrap()
    }

    #[test]
    fn constant_statistic_always_released() {
        let mut rng = RandomSource::new(3, 0).rng();
        let budget = PrivacyBudget::new(1.0, 1e-9).unwrap();
        let out = propose_test_release(&(), |_| 0.5, &lambda(0.0), |_, _| Distance::Unbounded, &budget, &mut rng)
            .unwrap();
        assert_eq!(
            out,
            PtrOutcome::Released {
                value: 0.5,
                noise: 0.0,
                noise_scale: 0.0,
                noisy_distance: f64::INFINITY,
                threshold: 1e9f64.ln(),
            }
        );
    }

    #[test]
    fn far_dataset_released() {
        let mut rng = RandomSource::new(3, 0).rng();
        let budget = PrivacyBudget::new(1.0, 1e-6).unwrap();
        for _ in 0..100 {
            let out = propose_test_release(&(), |_| 0.0, &lambda(1.0), |_, _| Distance::Finite(1_000_000), &budget, &mut rng)
                .unwrap();
            assert!(!out.is_fallback());
        }
    }

    #[test]
    fn requires_delta_and_local_bound() {
        let mut rng = RandomSource::new(3, 0).rng();
        let pure = PrivacyBudget::pure(1.0).unwrap();
        let r = propose_test_release(&(), |_| 0.0, &lambda(1.0), |_, _| Distance::Finite(5), &pure, &mut rng);
        assert!(matches!(r, Err(Error::DeltaRequired(_))));
        let budget = PrivacyBudget::new(1.0, 0.1).unwrap();
        let global = SensitivityBound::global(1.0, NeighbourRelation::UserLevelPrivateK).unwrap();
        assert!(propose_test_release(&(), |_| 0.0, &global, |_, _| Distance::Finite(5), &budget, &mut rng).is_err());
    }
}
