//! Dataset generation: draw fields from the prior, simulate, reject
//! divergent systems, corrupt, sample field targets, shard to disk, and
//! emit a manifest with rejection statistics and a train/validation
//! split.
//!
//! Every record is generated from its own derived RNG stream keyed by
//! (global seed, dimension, record index, attempt), so records are
//! independent of each other and reproducible in isolation.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vfield_core::{
    bounding_box, corrupt_system, sample_vf_targets, seed::tags, seed::stream, simulate_system,
    CorruptionConfig, PriorConfig, SimOutcome, TimeGrid, Trajectory, TrajectorySet,
};

use crate::error::DataError;
use crate::record::{quantize, Provenance, SystemRecord};
use crate::shard::{load_shard, write_shard};

/// How many records to generate per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionCount {
    pub dimension: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub counts: Vec<DimensionCount>,
    pub max_degree: u32,
    pub degree_keep_prob: f64,
    pub monomial_keep_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
    pub substeps: usize,
    pub n_trajectories: usize,
    pub reject_threshold: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub n_vf: usize,
    pub box_expand: f64,
    pub validation_fraction: f64,
    pub shard_size: usize,
    pub max_attempts: u64,
}

impl GenerationConfig {
    /// Pretraining defaults at desk scale for a single dimension.
    pub fn desk(dimension: usize, count: u64) -> Self {
        Self {
            counts: vec![DimensionCount { dimension, count }],
            max_degree: 3,
            degree_keep_prob: 0.5,
            monomial_keep_prob: 0.5,
            scale_min: 0.0,
            scale_max: 2.0,
            t_start: 0.0,
            t_end: 10.0,
            n_points: 200,
            substeps: 20,
            n_trajectories: 9,
            reject_threshold: 1e2,
            sigma_min: 0.0,
            sigma_max: 0.06,
            rho_min: 0.0,
            rho_max: 0.5,
            n_vf: 10_000,
            box_expand: 0.2,
            validation_fraction: 0.1,
            shard_size: 512,
            max_attempts: 10_000,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, DataError> {
        Ok(TimeGrid::new(self.t_start, self.t_end, self.n_points, self.substeps)?)
    }

    pub fn prior(&self, dimension: usize) -> PriorConfig {
        let mut p = PriorConfig::new(dimension, self.max_degree);
        p.degree_keep_prob = self.degree_keep_prob;
        p.monomial_keep_prob = self.monomial_keep_prob;
        p.scale_range = (self.scale_min, self.scale_max);
        p
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.counts.is_empty() {
            return Err(DataError::BadConfig("counts must be non-empty".into()));
        }
        for c in &self.counts {
            if !(1..=3).contains(&c.dimension) {
                return Err(DataError::BadConfig(format!(
                    "dimension must be 1..=3, got {}",
                    c.dimension
                )));
            }
            self.prior(c.dimension).validate()?;
        }
        self.grid()?;
        if self.n_trajectories == 0 || self.n_vf == 0 || self.shard_size == 0 {
            return Err(DataError::BadConfig(
                "n_trajectories, n_vf and shard_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(DataError::BadConfig(
                "validation_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.sigma_min < 0.0 || self.sigma_max < self.sigma_min {
            return Err(DataError::BadConfig("bad sigma range".into()));
        }
        if self.rho_min < 0.0 || self.rho_max < self.rho_min || self.rho_max >= 1.0 {
            return Err(DataError::BadConfig("bad rho range".into()));
        }
        Ok(())
    }
}

/// Generate one record from its provenance coordinates. Iterates the
/// rejection loop over attempts; each attempt derives a fresh stream.
pub fn generate_record(
    config: &GenerationConfig,
    global_seed: u64,
    dimension: usize,
    index: u64,
) -> Result<(SystemRecord, u64), DataError> {
    let grid = config.grid()?;
    let prior = config.prior(dimension);
    for attempt in 0..config.max_attempts {
        let mut rng = stream(
            global_seed,
            &[tags::RECORD, dimension as u64, index, tags::ATTEMPT, attempt],
        );
        let field = vfield_core::sample_vector_field(&prior, &mut rng);
        let sim = simulate_system(
            &field,
            config.n_trajectories,
            &grid,
            config.reject_threshold,
            &mut rng,
        );
        let set = match sim {
            SimOutcome::Accepted(set) => set,
            SimOutcome::Rejected { .. } => continue,
        };

        // Canonical record data is f32-precision so disk round trips are
        // lossless against regeneration.
        let clean = TrajectorySet {
            grid,
            trajectories: set
                .trajectories
                .iter()
                .map(|t| Trajectory {
                    times: t.times.clone(),
                    states: t.states.mapv(quantize),
                })
                .collect(),
        };

        let sigma = if config.sigma_max > config.sigma_min {
            rng.gen_range(config.sigma_min..config.sigma_max)
        } else {
            config.sigma_min
        };
        let rho = if config.rho_max > config.rho_min {
            rng.gen_range(config.rho_min..config.rho_max)
        } else {
            config.rho_min
        };
        let corrupted = corrupt_system(&clean, &CorruptionConfig::new(sigma, rho), &mut rng)
            .into_iter()
            .map(|mut c| {
                c.observations.mapv_inplace(quantize);
                c
            })
            .collect::<Vec<_>>();

        let boxed = bounding_box(&clean, config.box_expand)?;
        let vf_targets = sample_vf_targets(&field, &boxed, config.n_vf, &mut rng);

        let record = SystemRecord {
            field,
            grid,
            clean,
            corrupted,
            boxed,
            vf_targets,
            provenance: Provenance {
                global_seed,
                dimension,
                index,
                attempt,
                sigma,
                rho,
            },
        };
        return Ok((record, attempt));
    }
    Err(DataError::Unreachable {
        dimension,
        index,
        attempts: config.max_attempts,
    })
}

/// Regenerate a stored record from its provenance; used to audit shards.
pub fn regenerate_record(
    config: &GenerationConfig,
    provenance: &Provenance,
) -> Result<SystemRecord, DataError> {
    let (record, _) = generate_record(
        config,
        provenance.global_seed,
        provenance.dimension,
        provenance.index,
    )?;
    if record.provenance != *provenance {
        return Err(DataError::BadConfig(
            "provenance mismatch: config differs from the generating one".into(),
        ));
    }
    Ok(record)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionStats {
    pub dimension: usize,
    pub requested: u64,
    pub accepted: u64,
    pub attempts: u64,
    pub rejected: u64,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordEntry {
    pub index: u64,
    pub offset: u64,
    pub sigma: f64,
    pub rho: f64,
    pub attempt: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardEntry {
    pub path: String,
    pub dimension: usize,
    pub record_count: usize,
    pub byte_len: u64,
    pub sha256: String,
    pub records: Vec<RecordEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordId {
    pub dimension: usize,
    pub index: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub global_seed: u64,
    pub config: GenerationConfig,
    pub dimensions: Vec<DimensionStats>,
    pub shards: Vec<ShardEntry>,
    pub train: Vec<RecordId>,
    pub validation: Vec<RecordId>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Generate the whole dataset under `out_dir`. Deterministic: identical
/// config and seed produce byte-identical shards and manifest.
pub fn generate_dataset(
    config: &GenerationConfig,
    global_seed: u64,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetManifest, DataError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| DataError::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DataError::BadConfig(e.to_string()))?;

    let mut dimensions = Vec::new();
    let mut shards = Vec::new();
    let mut train = Vec::new();
    let mut validation = Vec::new();

    for dc in &config.counts {
        let results: Vec<Result<(SystemRecord, u64), DataError>> = pool.install(|| {
            (0..dc.count)
                .into_par_iter()
                .map(|index| generate_record(config, global_seed, dc.dimension, index))
                .collect()
        });
        let mut records = Vec::with_capacity(results.len());
        let mut attempts_total = 0u64;
        for r in results {
            let (record, attempt) = r?;
            attempts_total += attempt + 1;
            records.push(record);
        }
        let accepted = records.len() as u64;
        dimensions.push(DimensionStats {
            dimension: dc.dimension,
            requested: dc.count,
            accepted,
            attempts: attempts_total,
            rejected: attempts_total - accepted,
            rejection_rate: (attempts_total - accepted) as f64 / attempts_total.max(1) as f64,
        });

        // Validation split: the trailing fraction of each dimension's
        // records (i.i.d. by construction, so the tail is unbiased).
        let n_val = (config.validation_fraction * dc.count as f64).floor() as u64;
        for idx in 0..dc.count {
            let id = RecordId {
                dimension: dc.dimension,
                index: idx,
            };
            if idx >= dc.count - n_val {
                validation.push(id);
            } else {
                train.push(id);
            }
        }

        for (chunk_no, chunk) in records.chunks(config.shard_size).enumerate() {
            let name = format!("d{}-{:04}.vfshard", dc.dimension, chunk_no);
            let path = out_dir.join(&name);
            let encoded = write_shard(&path, chunk)?;
            shards.push(ShardEntry {
                path: name,
                dimension: dc.dimension,
                record_count: chunk.len(),
                byte_len: encoded.bytes.len() as u64,
                sha256: encoded.sha256_hex,
                records: chunk
                    .iter()
                    .zip(&encoded.record_offsets)
                    .map(|(r, &offset)| RecordEntry {
                        index: r.provenance.index,
                        offset,
                        sigma: r.provenance.sigma,
                        rho: r.provenance.rho,
                        attempt: r.provenance.attempt,
                    })
                    .collect(),
            });
        }
    }

    let manifest = DatasetManifest {
        format_version: 1,
        global_seed,
        config: config.clone(),
        dimensions,
        shards,
        train,
        validation,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    let mpath = out_dir.join(MANIFEST_NAME);
    fs::write(&mpath, json).map_err(|e| DataError::io(&mpath, e))?;
    Ok(manifest)
}

/// A loaded dataset: manifest plus all records in manifest order.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SystemRecord>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let mpath = dir.join(MANIFEST_NAME);
        let bytes = fs::read(&mpath).map_err(|e| DataError::io(&mpath, e))?;
        let manifest: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| DataError::Manifest(e.to_string()))?;
        let mut records = Vec::new();
        for shard in &manifest.shards {
            records.extend(load_shard(&dir.join(&shard.path))?);
        }
        Ok(Self { manifest, records })
    }

    fn find(&self, id: RecordId) -> Option<&SystemRecord> {
        self.records
            .iter()
            .find(|r| r.provenance.dimension == id.dimension && r.provenance.index == id.index)
    }

    pub fn train_records(&self) -> Vec<&SystemRecord> {
        self.manifest
            .train
            .iter()
            .filter_map(|&id| self.find(id))
            .collect()
    }

    pub fn validation_records(&self) -> Vec<&SystemRecord> {
        self.manifest
            .validation
            .iter()
            .filter_map(|&id| self.find(id))
            .collect()
    }
}
