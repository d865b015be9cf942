//! Architectural invariances of a randomly initialized model: context
//! permutation, time shift/dilation, per-dimension affine changes of the
//! observation coordinates, and independence from the padded coordinate.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfield_core::CorruptedTrajectory;
use vfield_model::{ModelConfig, ModelNet, ParamSet, Predictor};

fn desk_predictor_parts(seed: u64) -> (Arc<ModelNet>, Arc<ParamSet>) {
    let net = Arc::new(ModelNet::new(ModelConfig::desk()).unwrap());
    let params = Arc::new(ParamSet::init(
        net.spec(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    ));
    (net, params)
}

/// A wavy 2D context on a dyadic grid (exact float arithmetic under
/// shifts by whole powers of two).
fn context_2d(k: usize, len: usize, seed: u64) -> Vec<CorruptedTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let phase: f64 = rng.gen_range(0.0..3.0);
            let amp: f64 = rng.gen_range(0.5..2.0);
            let times: Vec<f64> = (0..len).map(|i| i as f64 * 0.0625).collect();
            let observations = Array2::from_shape_fn((len, 2), |(i, j)| {
                let t = times[i];
                if j == 0 {
                    amp * (t + phase).sin()
                } else {
                    amp * (t + phase).cos() * 0.5 + 1.0
                }
            });
            CorruptedTrajectory {
                times,
                observations,
                keep_mask: vec![true; len],
            }
        })
        .collect()
}

fn queries_2d(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.5..1.5))
}

fn max_rel_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-9))
        .fold(0.0, f64::max)
}

#[test]
fn transition_permutation_leaves_predictions_essentially_unchanged() {
    let (net, params) = desk_predictor_parts(1);
    let ctx = context_2d(3, 40, 10);
    // Permute whole trajectories (transitions are per-trajectory
    // concatenations, so this permutes the transition set).
    let permuted = vec![ctx[2].clone(), ctx[0].clone(), ctx[1].clone()];
    let p1 = Predictor::fit(net.clone(), params.clone(), &ctx).unwrap();
    let p2 = Predictor::fit(net, params, &permuted).unwrap();
    let q = queries_2d(16, 3);
    let (f1, _) = p1.eval_batch(&q).unwrap();
    let (f2, _) = p2.eval_batch(&q).unwrap();
    assert!(max_rel_diff(&f1, &f2) < 1e-5, "diff {}", max_rel_diff(&f1, &f2));
}

#[test]
fn time_shift_changes_nothing_bit_exactly() {
    let (net, params) = desk_predictor_parts(2);
    let ctx = context_2d(2, 32, 11);
    // Shift by a power of two: dyadic grid plus dyadic shift keeps every
    // computed gap bit-identical.
    let shifted: Vec<CorruptedTrajectory> = ctx
        .iter()
        .map(|t| CorruptedTrajectory {
            times: t.times.iter().map(|&v| v + 4.0).collect(),
            observations: t.observations.clone(),
            keep_mask: t.keep_mask.clone(),
        })
        .collect();
    let p1 = Predictor::fit(net.clone(), params.clone(), &ctx).unwrap();
    let p2 = Predictor::fit(net, params, &shifted).unwrap();
    let q = queries_2d(8, 5);
    let (f1, u1) = p1.eval_batch(&q).unwrap();
    let (f2, u2) = p2.eval_batch(&q).unwrap();
    assert_eq!(f1, f2);
    assert_eq!(u1, u2);
}

#[test]
fn time_dilation_rescales_the_field_inversely() {
    let (net, params) = desk_predictor_parts(3);
    let ctx = context_2d(2, 32, 12);
    let c = 3.0;
    let dilated: Vec<CorruptedTrajectory> = ctx
        .iter()
        .map(|t| CorruptedTrajectory {
            times: t.times.iter().map(|&v| v * c).collect(),
            observations: t.observations.clone(),
            keep_mask: t.keep_mask.clone(),
        })
        .collect();
    let p1 = Predictor::fit(net.clone(), params.clone(), &ctx).unwrap();
    let p2 = Predictor::fit(net, params, &dilated).unwrap();
    let q = queries_2d(12, 6);
    let (f1, _) = p1.eval_batch(&q).unwrap();
    let (f2, _) = p2.eval_batch(&q).unwrap();
    let scaled = f2.mapv(|v| v * c);
    assert!(max_rel_diff(&f1, &scaled) < 1e-4, "diff {}", max_rel_diff(&f1, &scaled));
}

#[test]
fn affine_observation_changes_commute_with_prediction() {
    let (net, params) = desk_predictor_parts(4);
    let ctx = context_2d(3, 30, 13);
    let a = [2.5, 0.75];
    let b = [-1.0, 3.0];
    let mapped: Vec<CorruptedTrajectory> = ctx
        .iter()
        .map(|t| {
            let mut obs = t.observations.clone();
            for mut row in obs.rows_mut() {
                for j in 0..2 {
                    row[j] = a[j] * row[j] + b[j];
                }
            }
            CorruptedTrajectory {
                times: t.times.clone(),
                observations: obs,
                keep_mask: t.keep_mask.clone(),
            }
        })
        .collect();
    let p1 = Predictor::fit(net.clone(), params.clone(), &ctx).unwrap();
    let p2 = Predictor::fit(net, params, &mapped).unwrap();

    let q = queries_2d(12, 7);
    let mut q_mapped = q.clone();
    for mut row in q_mapped.rows_mut() {
        for j in 0..2 {
            row[j] = a[j] * row[j] + b[j];
        }
    }
    let (f1, _) = p1.eval_batch(&q).unwrap();
    let (f2, _) = p2.eval_batch(&q_mapped).unwrap();
    let expected = {
        let mut e = f1.clone();
        for mut row in e.rows_mut() {
            for j in 0..2 {
                row[j] *= a[j];
            }
        }
        e
    };
    assert!(max_rel_diff(&expected, &f2) < 1e-4, "diff {}", max_rel_diff(&expected, &f2));
}

#[test]
fn padded_coordinate_value_does_not_leak_into_live_dimensions() {
    // Embed a 2D system into the 3D slot with two different pad fills;
    // the first two output components must agree.
    let (net, params) = desk_predictor_parts(5);
    let base = context_2d(2, 24, 14);
    let embed = |fill: f64| -> Vec<CorruptedTrajectory> {
        base.iter()
            .map(|t| {
                let n = t.observations.nrows();
                let mut obs = Array2::from_elem((n, 3), fill);
                obs.slice_mut(ndarray::s![.., ..2]).assign(&t.observations);
                CorruptedTrajectory {
                    times: t.times.clone(),
                    observations: obs,
                    keep_mask: t.keep_mask.clone(),
                }
            })
            .collect()
    };
    let p0 = Predictor::fit(net.clone(), params.clone(), &embed(0.0)).unwrap();
    let p7 = Predictor::fit(net, params, &embed(7.5)).unwrap();

    let q2 = queries_2d(10, 8);
    let mut q0 = Array2::zeros((10, 3));
    q0.slice_mut(ndarray::s![.., ..2]).assign(&q2);
    let mut q7 = Array2::from_elem((10, 3), 7.5);
    q7.slice_mut(ndarray::s![.., ..2]).assign(&q2);

    let (f0, _) = p0.eval_batch(&q0).unwrap();
    let (f7, _) = p7.eval_batch(&q7).unwrap();
    for i in 0..10 {
        for j in 0..2 {
            let (x, y) = (f0[(i, j)], f7[(i, j)]);
            assert!((x - y).abs() < 1e-6, "({i},{j}): {x} vs {y}");
        }
    }
}

#[test]
fn predictions_are_continuous_and_finite_on_a_box() {
    let (net, params) = desk_predictor_parts(6);
    let ctx = context_2d(2, 24, 15);
    let p = Predictor::fit(net, params, &ctx).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x0 = -1.5 + 3.0 * (i as f64 / 19.0);
        let q = Array2::from_shape_vec(
            (2, 2),
            vec![x0, 0.3, x0 + 1e-6, 0.3],
        )
        .unwrap();
        let (f, u) = p.eval_batch(&q).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(u.iter().all(|v| v.is_finite()));
        let deriv = (f[(1, 0)] - f[(0, 0)]).abs() / 1e-6;
        worst = worst.max(deriv);
    }
    // Finite directional difference quotients on a compact box.
    assert!(worst.is_finite() && worst < 1e6, "worst quotient {worst}");
}
