//! Floating-point abstraction for the closed-form parts of the library.
//!
//! Weight, threshold and variance formulas are generic over [`Scalar`] so they
//! can be evaluated in `f32` for cheap sweeps or `f64` for oracle checks.
//! Sampling and privacy mechanisms are `f64` only.

use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar accepted by the generic formula layer.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("every f64 constant is representable after rounding")
    }

    /// Converts a count.
    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("counts are representable after rounding")
    }

    /// Lossy view as `f64`, used for diagnostics and logging.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
