//! Model-ready batches: per record, a context of K corrupted
//! trajectories turned into padded transition tensors with validity
//! masks, plus normalized query locations and targets.
//!
//! Query construction is supplied by the caller (training owns the
//! sampling strategy); this module owns selection, normalization,
//! padding, and masking.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vfield_core::CorruptedTrajectory;
use vfield_model::{extract_transitions, fit_normalization, NormalizationState, FEATURE_COLS, MAX_DIM};

use crate::error::DataError;
use crate::record::SystemRecord;

/// Query locations and ground-truth field values in original coordinates.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub locations: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// B x J_max x FEATURE_COLS transition features, zero padded.
    pub features: Array3<f64>,
    /// B x J_max validity mask (1 valid, 0 padding).
    pub validity: Array2<f64>,
    /// B x Q x MAX_DIM normalized query locations, zero padded.
    pub queries: Array3<f64>,
    /// B x Q x MAX_DIM normalized query targets, zero padded.
    pub query_targets: Array3<f64>,
    /// B x MAX_DIM mask of live dimensions.
    pub dim_mask: Array2<f64>,
    pub norms: Vec<NormalizationState>,
    pub k_selected: Vec<usize>,
    /// Actual transition counts per item (row count before padding).
    pub j_counts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn total_valid_transitions(&self) -> usize {
        self.j_counts.iter().sum()
    }
}

/// Assemble a batch. Per record: draw K uniformly from `k_range`, select
/// K corrupted trajectories without replacement, fit normalization on
/// that context, extract transitions, and normalize the sampled queries.
pub fn make_batch<F>(
    records: &[&SystemRecord],
    k_range: (usize, usize),
    n_queries: usize,
    rng: &mut ChaCha8Rng,
    mut sample_queries: F,
) -> Result<Batch, DataError>
where
    F: FnMut(&SystemRecord, usize, &mut ChaCha8Rng) -> QuerySet,
{
    let (k_min, k_max) = k_range;
    if k_min == 0 || k_max < k_min {
        return Err(DataError::BadConfig(format!(
            "bad context size range [{k_min}, {k_max}]"
        )));
    }
    for r in records {
        if r.corrupted.len() < k_max {
            return Err(DataError::BadConfig(format!(
                "record d{}:{} has {} trajectories, need at least {k_max}",
                r.provenance.dimension,
                r.provenance.index,
                r.corrupted.len()
            )));
        }
    }

    let b = records.len();
    let mut per_item: Vec<(Array2<f64>, usize, NormalizationState, usize, QuerySet)> =
        Vec::with_capacity(b);
    for record in records {
        let k = rng.gen_range(k_min..=k_max);
        let chosen = rand::seq::index::sample(rng, record.corrupted.len(), k);
        let context: Vec<CorruptedTrajectory> =
            chosen.iter().map(|i| record.corrupted[i].clone()).collect();
        let norm = fit_normalization(&context)?;
        let transitions = extract_transitions(&context, &norm)?;
        let queries = sample_queries(record, n_queries, rng);
        per_item.push((transitions.features, transitions.dimension, norm, k, queries));
    }

    let j_max = per_item.iter().map(|(f, ..)| f.nrows()).max().unwrap_or(0);
    let mut features = Array3::zeros((b, j_max, FEATURE_COLS));
    let mut validity = Array2::zeros((b, j_max));
    let mut queries = Array3::zeros((b, n_queries, MAX_DIM));
    let mut query_targets = Array3::zeros((b, n_queries, MAX_DIM));
    let mut dim_mask = Array2::zeros((b, MAX_DIM));
    let mut norms = Vec::with_capacity(b);
    let mut k_selected = Vec::with_capacity(b);
    let mut j_counts = Vec::with_capacity(b);

    for (i, (feats, d, norm, k, qs)) in per_item.into_iter().enumerate() {
        let j = feats.nrows();
        features
            .slice_mut(ndarray::s![i, ..j, ..])
            .assign(&feats);
        for jj in 0..j {
            validity[(i, jj)] = 1.0;
        }
        for jd in 0..d {
            dim_mask[(i, jd)] = 1.0;
        }
        let denorm = norm.field_denorm_factors();
        let mut z = vec![0.0; d];
        for q in 0..qs.locations.nrows().min(n_queries) {
            norm.normalize_state(qs.locations.row(q).as_slice().unwrap(), &mut z);
            for jd in 0..d {
                queries[(i, q, jd)] = z[jd];
                query_targets[(i, q, jd)] = qs.targets[(q, jd)] / denorm[jd];
            }
        }
        norms.push(norm);
        k_selected.push(k);
        j_counts.push(j);
    }

    Ok(Batch {
        features,
        validity,
        queries,
        query_targets,
        dim_mask,
        norms,
        k_selected,
        j_counts,
    })
}
