//! Meta-distributions over per-user means.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default truncation point of the truncated Gaussian, in units of the
/// untruncated standard deviation. Keeps mass `>= 0.9` and `lambda <= 1/2`.
pub const DEFAULT_TRUNCATION: f64 = 2.0;

const SUPPORT_SLACK: f64 = 1e-12;

/// Family of a meta-distribution, with whatever shape constants the
/// concentration bounds need. Carries no location or scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetaKind {
    PointMass,
    TwoPoint,
    TruncatedGaussian { w: f64 },
}

impl MetaKind {
    /// Largest possible `|p_i - p|` for a member of this family with
    /// standard deviation `sigma`.
    pub fn half_width(&self, sigma: f64) -> f64 {
        match *self {
            MetaKind::PointMass => 0.0,
            MetaKind::TwoPoint => sigma,
            MetaKind::TruncatedGaussian { w } => {
                let shape = GaussianShape::new(w);
                sigma * w / (1.0 - shape.lambda).sqrt()
            }
        }
    }

    /// `E|X - p|^3 / sigma^3` for members of this family (0 for a point mass).
    pub fn third_moment_ratio(&self) -> f64 {
        match *self {
            MetaKind::PointMass => 0.0,
            MetaKind::TwoPoint => 1.0,
            MetaKind::TruncatedGaussian { w } => {
                let shape = GaussianShape::new(w);
                // E|Z|^3 for Z standard normal truncated to [-w, w].
                let raw = 2.0 * (2.0 * std_normal_pdf(0.0) - (w * w + 2.0) * std_normal_pdf(w))
                    / shape.mass;
                raw / (1.0 - shape.lambda).powf(1.5)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct GaussianShape {
    /// `Phi(w) - Phi(-w)`.
    mass: f64,
    /// `2 w phi(w) / mass`; the truncated standard normal has variance `1 - lambda`.
    lambda: f64,
}

impl GaussianShape {
    fn new(w: f64) -> Self {
        let mass = libm::erf(w / core::f64::consts::SQRT_2);
        let lambda = 2.0 * w * std_normal_pdf(w) / mass;
        Self { mass, lambda }
    }
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

/// Distribution `D` of per-user means on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaDistribution {
    PointMass { p: f64 },
    /// Mass 1/2 at each of `p - sigma_p` and `p + sigma_p`.
    TwoPoint { p: f64, sigma_p: f64 },
    /// Gaussian truncated to `w` untruncated standard deviations, rescaled so
    /// that its variance is exactly `sigma_p^2`.
    TruncatedGaussian { p: f64, sigma_p: f64, w: f64 },
}

impl MetaDistribution {
    pub fn point_mass(p: f64) -> Result<Self> {
        Self::PointMass { p }.validated()
    }

    pub fn two_point(p: f64, sigma_p: f64) -> Result<Self> {
        Self::TwoPoint { p, sigma_p }.validated()
    }

    pub fn truncated_gaussian(p: f64, sigma_p: f64) -> Result<Self> {
        Self::truncated_gaussian_with(p, sigma_p, DEFAULT_TRUNCATION)
    }

    pub fn truncated_gaussian_with(p: f64, sigma_p: f64, w: f64) -> Result<Self> {
        Self::TruncatedGaussian { p, sigma_p, w }.validated()
    }

    /// Checks every invariant; deserialized values should pass through here.
    pub fn validated(self) -> Result<Self> {
        let p = self.mean();
        let sigma = self.sigma_p();
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma_p", format!("must be finite and nonnegative, got {sigma}")));
        }
        if let MetaDistribution::TruncatedGaussian { w, .. } = self {
            if !(w > 0.0) || !w.is_finite() {
                return Err(invalid("w", format!("must be positive, got {w}")));
            }
            let shape = GaussianShape::new(w);
            if shape.mass < 0.9 || shape.lambda > 0.5 {
                return Err(invalid(
                    "w",
                    format!(
                        "needs mass >= 0.9 and lambda <= 0.5, got mass {:.4} and lambda {:.4}",
                        shape.mass, shape.lambda
                    ),
                ));
            }
        }
        let bound = p * (1.0 - p);
        if sigma * sigma > bound + SUPPORT_SLACK {
            return Err(Error::VarianceTooLarge {
                sigma_p2: sigma * sigma,
                bound,
            });
        }
        let (lo, hi) = self.support();
        if lo < -SUPPORT_SLACK || hi > 1.0 + SUPPORT_SLACK {
            return Err(Error::SupportOutOfRange { lo, hi });
        }
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MetaDistribution::PointMass { p }
            | MetaDistribution::TwoPoint { p, .. }
            | MetaDistribution::TruncatedGaussian { p, .. } => p,
        }
    }

    pub fn sigma_p(&self) -> f64 {
        match *self {
            MetaDistribution::PointMass { .. } => 0.0,
            MetaDistribution::TwoPoint { sigma_p, .. }
            | MetaDistribution::TruncatedGaussian { sigma_p, .. } => sigma_p,
        }
    }

    pub fn variance(&self) -> f64 {
        self.sigma_p() * self.sigma_p()
    }

    pub fn kind(&self) -> MetaKind {
        match *self {
            MetaDistribution::PointMass { .. } => MetaKind::PointMass,
            MetaDistribution::TwoPoint { .. } => MetaKind::TwoPoint,
            MetaDistribution::TruncatedGaussian { w, .. } => MetaKind::TruncatedGaussian { w },
        }
    }

    /// Closed support `[lo, hi]`.
    pub fn support(&self) -> (f64, f64) {
        let h = self.kind().half_width(self.sigma_p());
        (self.mean() - h, self.mean() + h)
    }

    /// Draws one per-user mean, clamped into `[0, 1]` against rounding.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let q = match *self {
            MetaDistribution::PointMass { p } => p,
            MetaDistribution::TwoPoint { p, sigma_p } => {
                if rng.random::<bool>() {
                    p + sigma_p
                } else {
                    p - sigma_p
                }
            }
            MetaDistribution::TruncatedGaussian { p, sigma_p, w } => {
                let scale = sigma_p / (1.0 - GaussianShape::new(w).lambda).sqrt();
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= w {
                        break p + scale * z;
                    }
                }
            }
        };
        q.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn default_truncation_meets_shape_conditions() {
        let s = GaussianShape::new(DEFAULT_TRUNCATION);
        assert!(s.mass >= 0.9);
        assert!(s.lambda <= 0.5);
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(MetaDistribution::point_mass(1.2).is_err());
        assert!(MetaDistribution::two_point(0.05, 0.1).is_err());
        assert!(MetaDistribution::truncated_gaussian(0.5, 0.3).is_err());
        // w = 1 keeps only 68% of the mass.
        assert!(MetaDistribution::truncated_gaussian_with(0.5, 0.01, 1.0).is_err());
        assert!(MetaDistribution::two_point(0.5, 0.5).is_ok());
    }

    #[test]
    fn samples_stay_in_support() {
        let d = MetaDistribution::truncated_gaussian(0.3, 0.05).unwrap();
        let (lo, hi) = d.support();
        let mut rng = RandomSource::new(1, 0).rng();
        for _ in 0..10_000 {
            let q = d.sample(&mut rng);
            assert!(q >= lo && q <= hi);
        }
    }

    #[test]
    fn truncated_gaussian_moments() {
        let d = MetaDistribution::truncated_gaussian(0.5, 0.05).unwrap();
        let mut rng = RandomSource::new(2, 0).rng();
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * 0.05 / (n as f64).sqrt());
        assert!((var / 0.0025 - 1.0).abs() < 0.02);
        let third = xs.iter().map(|x| (x - 0.5).abs().powi(3)).sum::<f64>() / n as f64;
        let ratio = third / 0.05f64.powi(3);
        assert!((ratio - d.kind().third_moment_ratio()).abs() < 0.03);
    }
}
