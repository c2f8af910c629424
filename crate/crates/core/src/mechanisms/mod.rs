//! Differential privacy primitives.

mod histogram;
mod laplace;
mod order_statistic;
mod ptr;

pub use histogram::{dp_histogram, BinSpec, HistogramPath, HistogramRelease, stability_threshold};
pub use laplace::{laplace_mechanism, sample_laplace, LaplaceRelease};
pub use order_statistic::{em_intervals, em_order_statistic, within_order_bounds, EmInterval};
pub use ptr::{propose_test_release, Distance, PtrOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Which pairs of datasets count as neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeighbourRelation {
    /// One sample of one user changes.
    EventLevel,
    /// One user's samples change; their sample count does not.
    UserLevelPublicSize,
    /// One user's entire record changes, including their sample count.
    UserLevelPrivateK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensitivityKind {
    /// Holds for every neighbouring pair.
    Global,
    /// Proposed for the neighbourhood of one dataset; only PTR may use it.
    LocalProposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    value: f64,
    relation: NeighbourRelation,
    kind: SensitivityKind,
}

impl SensitivityBound {
    pub fn global(value: f64, relation: NeighbourRelation) -> Result<Self> {
        Self::new(value, relation, SensitivityKind::Global)
    }

    pub fn local_proposed(value: f64, relation: NeighbourRelation) -> Result<Self> {
        Self::new(value, relation, SensitivityKind::LocalProposed)
    }

    fn new(value: f64, relation: NeighbourRelation, kind: SensitivityKind) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(invalid("sensitivity", format!("must be finite and nonnegative, got {value}")));
        }
        Ok(Self { value, relation, kind })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn relation(&self) -> NeighbourRelation {
        self.relation
    }

    pub fn kind(&self) -> SensitivityKind {
        self.kind
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(invalid("epsilon", format!("must be positive and finite, got {epsilon}")))
    }
}
