//! The unit of dataset storage: one accepted prior draw with its clean
//! and corrupted trajectories, bounding box, and field target samples.

use serde::{Deserialize, Serialize};
use vfield_core::{
    BoundingBox, CorruptedTrajectory, PolynomialVectorField, TimeGrid, TrajectorySet,
    VectorFieldSample,
};

/// Everything needed to regenerate a record bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub global_seed: u64,
    pub dimension: usize,
    pub index: u64,
    /// Accepted attempt number of the per-record rejection loop.
    pub attempt: u64,
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemRecord {
    pub field: PolynomialVectorField,
    pub grid: TimeGrid,
    /// Clean solutions; state values are quantized to f32 precision so
    /// in-memory and on-disk semantics agree.
    pub clean: TrajectorySet,
    pub corrupted: Vec<CorruptedTrajectory>,
    pub boxed: BoundingBox,
    pub vf_targets: Vec<VectorFieldSample>,
    pub provenance: Provenance,
}

impl SystemRecord {
    pub fn dimension(&self) -> usize {
        self.provenance.dimension
    }

    pub fn n_trajectories(&self) -> usize {
        self.clean.trajectories.len()
    }
}

/// Quantize to f32 precision (exact upcast back to f64).
pub fn quantize(x: f64) -> f64 {
    x as f32 as f64
}
