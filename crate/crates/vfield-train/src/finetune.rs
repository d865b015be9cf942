//! Neural-ODE finetuning: condition the model on the observed
//! trajectories, then train by differentiating segment rollouts of the
//! predicted field against the observations.
//!
//! Per trajectory of length l, `n_ic = floor(2l / n_steps)` equally
//! spaced starting indices are chosen (segments overlap by roughly
//! half); from each start the field is integrated for `n_steps`
//! observation intervals with fixed-step Euler, synchronized with the
//! observed time grid, and the per-segment mean absolute errors are
//! summed into the loss. Normalization is fitted once from the full
//! context and frozen.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vfield_core::seed::{stream, tags};
use vfield_core::CorruptedTrajectory;
use vfield_model::{
    extract_transitions, fit_normalization, Bound, Cx, DecoderCache, ModelNet, NodeId,
    NormalizationState, ParamSet, Tape, TapeMode, MAX_DIM,
};

use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::step::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub n_steps: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Euler substeps per observation interval during rollouts.
    pub substeps: usize,
    /// Optional per-step state noise of scale dt/5 (regularization).
    pub step_noise: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            n_steps: 25,
            epochs: 200,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            grad_clip: 10.0,
            substeps: 20,
            step_noise: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub is_best: bool,
}

pub struct FinetuneOutcome {
    pub params: ParamSet,
    pub best_val_loss: f64,
    pub history: Vec<FinetuneEpoch>,
}

/// Segment layout for one trajectory.
pub fn segment_starts(len: usize, n_steps: usize) -> (usize, Vec<usize>) {
    assert!(len >= 2, "need at least two observations");
    // Short trajectories clamp the segment length to l - 1.
    let eff_steps = n_steps.min(len - 1);
    let n_ic = ((2 * len) / eff_steps).max(1);
    let last_start = len - 1 - eff_steps;
    let starts = if n_ic == 1 || last_start == 0 {
        vec![0]
    } else {
        (0..n_ic)
            .map(|i| ((i * last_start) as f64 / (n_ic - 1) as f64).round() as usize)
            .collect()
    };
    (eff_steps, starts)
}

struct RolloutCx {
    tape: Tape,
    bound: Bound<NodeId>,
    cache: DecoderCache<NodeId>,
    norm_scale: Vec<f64>,
    norm_shift: Vec<f64>,
    denorm: Vec<f64>,
    dim: usize,
}

fn build_context(
    net: &ModelNet,
    params: Arc<ParamSet>,
    context: &[CorruptedTrajectory],
    norm: &NormalizationState,
) -> Result<RolloutCx, TrainError> {
    let transitions = extract_transitions(context, norm)?;
    let dim = transitions.dimension;
    let mut tape = Tape::new(params, TapeMode::Inference);
    let bound = net.bind(&mut tape);
    let fh = tape.constant(transitions.features);
    let emb = net.embed_transitions(&mut tape, &bound, &fh);
    let encoded = net.encode(&mut tape, &bound, &emb, None)?;
    let cache = net.decoder_cache(&mut tape, &bound, &encoded, None);
    let norm_scale: Vec<f64> = norm.sigma.iter().map(|s| 1.0 / s).collect();
    let norm_shift: Vec<f64> = norm
        .mu
        .iter()
        .zip(&norm.sigma)
        .map(|(m, s)| -m / s)
        .collect();
    Ok(RolloutCx {
        tape,
        bound,
        cache,
        norm_scale,
        norm_shift,
        denorm: norm.field_denorm_factors(),
        dim,
    })
}

/// One Euler substep of the predicted field in original coordinates,
/// recorded on the tape so gradients flow through the whole rollout.
fn euler_substep(rc: &mut RolloutCx, net: &ModelNet, x: NodeId, h: f64) -> NodeId {
    let t = &mut rc.tape;
    let d = rc.dim;
    let z = t.affine_cols(&x, &rc.norm_scale, &rc.norm_shift);
    let padded = if d < MAX_DIM {
        let zeros = t.constant(Array2::zeros((1, MAX_DIM - d)));
        t.concat_cols(&[z, zeros])
    } else {
        z
    };
    let (field_n, _) = net.decode(t, &rc.bound, &rc.cache, &padded);
    let field_d = t.slice_cols(&field_n, 0, d);
    let zero_shift = vec![0.0; d];
    let field = t.affine_cols(&field_d, &rc.denorm, &zero_shift);
    let delta = t.scale(&field, h);
    t.add(&x, &delta)
}

/// Sum over initial conditions of per-segment MAE, as one tape graph.
/// Returns (loss node, per-trajectory effective step counts).
fn rollout_loss(
    rc: &mut RolloutCx,
    net: &ModelNet,
    trajectories: &[CorruptedTrajectory],
    cfg: &FinetuneConfig,
    noise_rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> NodeId {
    let d = rc.dim;
    let mut noise_rng = noise_rng;
    let mut segment_losses: Vec<NodeId> = Vec::new();
    for traj in trajectories {
        let len = traj.len();
        let (eff_steps, starts) = segment_starts(len, cfg.n_steps);
        for &start in &starts {
            let x0 = traj.observations.row(start).to_owned().insert_axis(ndarray::Axis(0));
            let mut x = rc.tape.constant(x0);
            let mut abs_sum: Option<NodeId> = None;
            for k in 0..eff_steps {
                let t0 = traj.times[start + k];
                let t1 = traj.times[start + k + 1];
                let h = (t1 - t0) / cfg.substeps as f64;
                for _ in 0..cfg.substeps {
                    x = euler_substep(rc, net, x, h);
                }
                if let Some(rng) = noise_rng.as_deref_mut() {
                    let sigma = (t1 - t0) / 5.0;
                    let noise = Array2::from_shape_fn((1, d), |_| {
                        sigma * rng.sample::<f64, _>(StandardNormal)
                    });
                    let nh = rc.tape.constant(noise);
                    x = rc.tape.add(&x, &nh);
                }
                let target = rc
                    .tape
                    .constant(traj.observations.row(start + k + 1).to_owned().insert_axis(ndarray::Axis(0)));
                let diff = rc.tape.sub(&x, &target);
                let a = rc.tape.abs(&diff);
                let ones = rc.tape.constant(Array2::ones((d, 1)));
                let s = rc.tape.matmul(&a, &ones);
                abs_sum = Some(match abs_sum {
                    Some(acc) => rc.tape.add(&acc, &s),
                    None => s,
                });
            }
            let mae = rc.tape.scale(&abs_sum.expect("eff_steps >= 1"), 1.0 / eff_steps as f64);
            segment_losses.push(mae);
        }
    }
    let stacked = rc.tape.concat_rows(&segment_losses);
    let ssum = rc.tape.sum_rows(&stacked);
    // sum_rows of an N x 1 stack is the plain sum of the segment MAEs.
    ssum
}

/// Forward-only loss of the current parameters on `trajectories`.
pub fn rollout_loss_value(
    net: &Arc<ModelNet>,
    params: &ParamSet,
    context: &[CorruptedTrajectory],
    trajectories: &[CorruptedTrajectory],
    norm: &NormalizationState,
    cfg: &FinetuneConfig,
) -> Result<f64, TrainError> {
    let mut rc = build_context(net, Arc::new(params.clone()), context, norm)?;
    let loss = rollout_loss(&mut rc, net, trajectories, cfg, None);
    Ok(rc.tape.value(&loss)[(0, 0)])
}

/// Adapt `params` to the observed trajectories; returns the parameters
/// with the best validation rollout loss over all epochs.
///
/// `validation` defaults to the training trajectories when `None`.
pub fn finetune(
    net: &Arc<ModelNet>,
    params: ParamSet,
    observed: &[CorruptedTrajectory],
    validation: Option<&[CorruptedTrajectory]>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome, TrainError> {
    let norm = fit_normalization(observed)?;
    let mut params = params;
    let mut opt = AdamW::new(
        AdamWConfig::new(cfg.learning_rate, cfg.weight_decay),
        &params,
    );
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..cfg.epochs {
        let shared = Arc::new(params.clone());
        let mut rc = build_context(net, shared, observed, &norm)?;
        let mut noise_rng = stream(cfg.seed, &[tags::DROPOUT, epoch as u64]);
        let noise = if cfg.step_noise { Some(&mut noise_rng) } else { None };
        let loss_node = rollout_loss(&mut rc, net, observed, cfg, noise);
        let train_loss = rc.tape.value(&loss_node)[(0, 0)];

        let val_loss = match validation {
            None => train_loss,
            Some(val) => rollout_loss_value(net, &params, observed, val, &norm, cfg)?,
        };
        let is_best = val_loss.is_finite() && val_loss < best_val;
        if is_best {
            best_val = val_loss;
            best_params = params.clone();
        }
        history.push(FinetuneEpoch {
            epoch,
            train_loss,
            val_loss,
            is_best,
        });

        if !train_loss.is_finite() {
            // Skip the update; parameters stay where they were.
            continue;
        }
        let raw = rc.tape.backward(loss_node);
        let mut grads: Vec<Array2<f64>> = raw
            .into_iter()
            .zip(params.arrays.iter())
            .map(|(g, a)| g.unwrap_or_else(|| Array2::zeros(a.raw_dim())))
            .collect();
        clip_global_norm(&mut grads, cfg.grad_clip);
        opt.step(&mut params, &grads);
    }

    // Score the final parameters too so the last update can win.
    let final_val = match validation {
        None => rollout_loss_value(net, &params, observed, observed, &norm, cfg)?,
        Some(val) => rollout_loss_value(net, &params, observed, val, &norm, cfg)?,
    };
    let is_best = final_val.is_finite() && final_val < best_val;
    if is_best {
        best_val = final_val;
        best_params = params;
    }
    history.push(FinetuneEpoch {
        epoch: cfg.epochs,
        train_loss: f64::NAN,
        val_loss: final_val,
        is_best,
    });

    Ok(FinetuneOutcome {
        params: best_params,
        best_val_loss: best_val,
        history,
    })
}

/// Solver-oracle path: per-segment MAE of rolling out an arbitrary field
/// with the same Euler segment convention, no model involved. Used to
/// bound what a perfect field estimate can achieve.
pub fn segment_mae_of_field(
    field: &dyn vfield_core::VectorField,
    traj: &CorruptedTrajectory,
    cfg: &FinetuneConfig,
) -> f64 {
    let d = traj.dimension();
    let (eff_steps, starts) = segment_starts(traj.len(), cfg.n_steps);
    let mut total = 0.0;
    let mut v = vec![0.0; d];
    for &start in &starts {
        let mut x: Vec<f64> = traj.observations.row(start).to_vec();
        let mut acc = 0.0;
        for k in 0..eff_steps {
            let h = (traj.times[start + k + 1] - traj.times[start + k]) / cfg.substeps as f64;
            for _ in 0..cfg.substeps {
                field.eval_into(&x, &mut v);
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi += h * vi;
                }
            }
            let target = traj.observations.row(start + k + 1);
            acc += x.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        total += acc / eff_steps as f64;
    }
    total
}
