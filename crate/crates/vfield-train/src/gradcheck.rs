//! Finite-difference audit of the analytic gradients through the full
//! loss (context encoding, decoding, uncertainty weighting).

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vfield_core::seed::stream;
use vfield_data::{make_batch, Batch, SystemRecord};
use vfield_model::{Cx, ModelNet, NodeId, ParamSet, Tape, TapeMode};

use crate::loss::item_loss;
use crate::queries::sample_query_locations;
use crate::step::TrainError;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_coordinates: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

fn batch_loss(net: &ModelNet, params: Arc<ParamSet>, batch: &Batch) -> Result<(f64, Vec<Option<Array2<f64>>>), TrainError> {
    let mut tape = Tape::new(params, TapeMode::Inference);
    let bound = net.bind(&mut tape);
    let mut losses: Vec<NodeId> = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let j = batch.j_counts[i];
        let features = batch.features.slice(ndarray::s![i, ..j, ..]).to_owned();
        let queries = batch.queries.slice(ndarray::s![i, .., ..]).to_owned();
        let targets = batch.query_targets.slice(ndarray::s![i, .., ..]).to_owned();
        let dim_mask = batch.dim_mask.row(i).to_vec();
        let nodes = item_loss(&mut tape, net, &bound, features, queries, targets, &dim_mask)?;
        losses.push(nodes.loss);
    }
    let stacked = tape.concat_rows(&losses);
    let total = tape.mean_all(&stacked);
    let value = tape.value(&total)[(0, 0)];
    let grads = tape.backward(total);
    Ok((value, grads))
}

fn forward_only(net: &ModelNet, params: Arc<ParamSet>, batch: &Batch) -> Result<f64, TrainError> {
    // Same graph, value only; backward is simply not invoked.
    let mut tape = Tape::new(params, TapeMode::Inference);
    let bound = net.bind(&mut tape);
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let j = batch.j_counts[i];
        let features = batch.features.slice(ndarray::s![i, ..j, ..]).to_owned();
        let queries = batch.queries.slice(ndarray::s![i, .., ..]).to_owned();
        let targets = batch.query_targets.slice(ndarray::s![i, .., ..]).to_owned();
        let dim_mask = batch.dim_mask.row(i).to_vec();
        let nodes = item_loss(&mut tape, net, &bound, features, queries, targets, &dim_mask)?;
        acc += tape.value(&nodes.loss)[(0, 0)];
    }
    Ok(acc / batch.len() as f64)
}

/// Compare analytic gradients against central finite differences on
/// `n_coordinates` randomly sampled parameter entries.
pub fn gradient_check(
    net: &Arc<ModelNet>,
    params: &ParamSet,
    records: &[&SystemRecord],
    n_coordinates: usize,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let mut rng = stream(seed, &[0xb0]);
    let batch = make_batch(records, (1, 2), 4, &mut rng, |r, n, rng| {
        sample_query_locations(r, n, rng)
    })?;
    let shared = Arc::new(params.clone());
    let (_, grads) = batch_loss(net, shared, &batch)?;

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut picked = 0usize;
    let mut coord_rng: ChaCha8Rng = stream(seed, &[0xcc]);
    while picked < n_coordinates {
        let p = coord_rng.gen_range(0..params.arrays.len());
        let (rows, cols) = params.arrays[p].dim();
        let i = coord_rng.gen_range(0..rows);
        let j = coord_rng.gen_range(0..cols);

        let perturbed = |delta: f64| {
            let mut set = params.clone();
            let mut arr = set.arrays[p].as_ref().clone();
            arr[(i, j)] += delta;
            set.arrays[p] = Arc::new(arr);
            Arc::new(set)
        };
        let lp = forward_only(net, perturbed(h), &batch)?;
        let lm = forward_only(net, perturbed(-h), &batch)?;
        let fd = (lp - lm) / (2.0 * h);
        let analytic = grads[p].as_ref().map_or(0.0, |g| g[(i, j)]);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
        picked += 1;
    }

    Ok(GradCheckReport {
        n_coordinates: picked,
        max_rel_error: max_rel,
        mean_rel_error: sum_rel / picked as f64,
    })
}
