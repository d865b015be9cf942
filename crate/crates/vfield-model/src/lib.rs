//! Attention-based neural operator for vector-field estimation.
//!
//! Pipeline: fit per-context normalization, extract transition features,
//! encode them with linear self-attention, then decode arbitrary query
//! locations through softmax cross-attention into a field estimate and a
//! log-variance. Training runs the identical forward code on a recording
//! tape ([`graph::Tape`]); inference uses the eager executor.

pub mod config;
pub mod error;
pub mod features;
pub mod graph;
pub mod net;
pub mod norm;
pub mod params;
pub mod predict;

pub use config::ModelConfig;
pub use error::ModelError;
pub use features::{extract_transitions, TransitionSet, FEATURE_COLS, MAX_DIM};
pub use graph::{Cx, Eager, NodeId, Tape, TapeMode};
pub use net::{Bound, DecoderCache, ModelNet};
pub use norm::{fit_normalization, NormalizationState, DELTA_TAU_TARGET, SIGMA_FLOOR};
pub use params::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ParamSet, ParamSpec,
};
pub use predict::{predict_field, Predictor};
