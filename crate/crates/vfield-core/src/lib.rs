//! Domain core: sampling polynomial vector fields, fixed-step IVP
//! integration with divergence filtering, and the observation model
//! (multiplicative noise plus Bernoulli subsampling).
//!
//! Everything here is a pure function of its inputs and an explicit RNG
//! stream, so callers can fan work out across threads by deriving one
//! stream per unit of work (see [`seed`]).

pub mod corrupt;
pub mod error;
pub mod field;
pub mod prior;
pub mod seed;
pub mod simulate;

pub use corrupt::{apply_noise, corrupt_system, subsample, CorruptedTrajectory, CorruptionConfig};
pub use error::CoreError;
pub use field::{FnField, VectorField};
pub use prior::{
    enumerate_monomials, sample_vector_field, MonomialExponents, PolynomialComponent,
    PolynomialVectorField, PriorConfig,
};
pub use simulate::{
    bounding_box, integrate_euler, integrate_euler_at, integrate_rk4, integrate_rk4_at,
    sample_vf_targets, simulate_system, BoundingBox, IntegrationResult, SimOutcome, TimeGrid,
    Trajectory, TrajectorySet, VectorFieldSample,
};
