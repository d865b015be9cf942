//! Dataset storage and assembly: generation with divergence rejection,
//! binary shard persistence with checksums, model-ready batches, and
//! dataset statistics.

pub mod batch;
pub mod error;
pub mod generate;
pub mod record;
pub mod shard;
pub mod stats;

pub use batch::{make_batch, Batch, QuerySet};
pub use error::DataError;
pub use generate::{
    generate_dataset, generate_record, regenerate_record, Dataset, DatasetManifest,
    DimensionCount, DimensionStats, GenerationConfig, RecordId, MANIFEST_NAME,
};
pub use record::{quantize, Provenance, SystemRecord};
pub use shard::{encode_shard, load_shard, write_shard};
pub use stats::{boundary_statistics, near_far_means, render_table, BoundaryStats};
