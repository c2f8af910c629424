use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_epsilon, SensitivityBound, SensitivityKind};
use crate::error::{invalid, Result};

/// Output of the Laplace mechanism with the draw kept for audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceRelease {
    pub value: f64,
    pub scale: f64,
    pub noise: f64,
}

/// One Laplace(0, `scale`) draw by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let centred = u - 0.5;
    -scale * centred.signum() * (1.0 - 2.0 * centred.abs()).ln()
}

/// `value + Lap(sensitivity / epsilon)`.
pub fn laplace_mechanism<R: Rng + ?Sized>(
    value: f64,
    sensitivity: &SensitivityBound,
    epsilon: f64,
    rng: &mut R,
) -> Result<LaplaceRelease> {
    check_epsilon(epsilon)?;
    if sensitivity.kind() != SensitivityKind::Global {
        return Err(invalid("sensitivity", "a proposed local bound may only be released through PTR"));
    }
    let scale = sensitivity.value() / epsilon;
    let noise = if scale == 0.0 { 0.0 } else { sample_laplace(scale, rng) };
    Ok(LaplaceRelease {
        value: value + noise,
        scale,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::NeighbourRelation;
    use crate::rng::RandomSource;

    fn global(v: f64) -> SensitivityBound {
        SensitivityBound::global(v, NeighbourRelation::UserLevelPublicSize).unwrap()
    }

    #[test]
    fn zero_sensitivity_is_exact() {
        let mut rng = RandomSource::new(0, 0).rng();
        let r = laplace_mechanism(0.25, &global(0.0), 3.0, &mut rng).unwrap();
        assert_eq!(r.value, 0.25);
    }

    #[test]
    fn scale_is_recorded_exactly() {
        let mut rng = RandomSource::new(0, 0).rng();
        let r = laplace_mechanism(1.0, &global(2.0), 0.5, &mut rng).unwrap();
        assert_eq!(r.scale, 4.0);
        assert_eq!(r.value - r.noise, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = RandomSource::new(0, 0).rng();
        assert!(laplace_mechanism(0.0, &global(1.0), 0.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, &global(1.0), -1.0, &mut rng).is_err());
        assert!(SensitivityBound::global(-1.0, NeighbourRelation::EventLevel).is_err());
        let local = SensitivityBound::local_proposed(1.0, NeighbourRelation::UserLevelPrivateK).unwrap();
        assert!(laplace_mechanism(0.0, &local, 1.0, &mut rng).is_err());
    }
}
