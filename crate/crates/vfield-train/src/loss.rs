//! The uncertainty-weighted field loss: per query, the mean absolute
//! error over live dimensions (normalized coordinates) weighted by the
//! predicted log-variance, `exp(-U) * r + U`.

use ndarray::Array2;
use vfield_model::{Cx, ModelNet, NodeId, Tape};

/// Handles into the loss graph of one batch item.
pub struct LossNodes {
    pub loss: NodeId,
    /// Per-query residual column (Q x 1).
    pub residual: NodeId,
    /// Per-query log-variance column (Q x 1).
    pub u: NodeId,
}

/// Build the loss subgraph for one record's context and queries.
///
/// `features` are the record's (unpadded) transitions, `queries` and
/// `targets` are normalized (Q x max_dim), `dim_mask` marks live
/// dimensions.
pub fn item_loss(
    tape: &mut Tape,
    net: &ModelNet,
    bound: &vfield_model::Bound<NodeId>,
    features: Array2<f64>,
    queries: Array2<f64>,
    targets: Array2<f64>,
    dim_mask: &[f64],
) -> Result<LossNodes, vfield_model::ModelError> {
    let active: f64 = dim_mask.iter().sum();
    debug_assert!(active > 0.0, "need at least one live dimension");
    let weights: Vec<f64> = dim_mask.iter().map(|&m| m / active).collect();

    let fh = tape.constant(features);
    let emb = net.embed_transitions(tape, bound, &fh);
    let encoded = net.encode(tape, bound, &emb, None)?;
    let cache = net.decoder_cache(tape, bound, &encoded, None);
    let qh = tape.constant(queries);
    let (field, u) = net.decode(tape, bound, &cache, &qh);

    let th = tape.constant(targets);
    let diff = tape.sub(&field, &th);
    let adiff = tape.abs(&diff);
    let w = tape.constant(Array2::from_shape_vec((weights.len(), 1), weights).unwrap());
    let residual = tape.matmul(&adiff, &w);
    let neg_u = tape.neg(&u);
    let conf = tape.exp(&neg_u);
    let weighted = tape.mul(&conf, &residual);
    let per_query = tape.add(&weighted, &u);
    let loss = tape.mean_all(&per_query);
    Ok(LossNodes { loss, residual, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use std::sync::Arc;
    use vfield_model::{ModelConfig, ParamSet, TapeMode};

    fn setup() -> (ModelNet, Tape) {
        use rand::SeedableRng;
        let net = ModelNet::new(ModelConfig::tiny()).unwrap();
        let params = Arc::new(ParamSet::init(
            net.spec(),
            &mut rand_chacha::ChaCha8Rng::seed_from_u64(1),
        ));
        let tape = Tape::new(params, TapeMode::Inference);
        (net, tape)
    }

    /// The analytic form: mean over queries of exp(-U) r + U.
    fn reference_loss(r: &[f64], u: &[f64]) -> f64 {
        r.iter()
            .zip(u)
            .map(|(&ri, &ui)| (-ui).exp() * ri + ui)
            .sum::<f64>()
            / r.len() as f64
    }

    #[test]
    fn loss_matches_closed_form_on_model_outputs() {
        let (net, mut tape) = setup();
        let bound = net.bind(&mut tape);
        let features = Array2::from_shape_fn((6, 10), |(i, j)| {
            if j == 9 {
                0.01
            } else {
                ((i * 7 + j) as f64 * 0.37).sin() * 0.5
            }
        });
        let queries = Array2::from_shape_fn((4, 3), |(i, j)| ((i + j) as f64 * 0.21).cos());
        let targets = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64 * 0.11).sin());
        let nodes = item_loss(
            &mut tape,
            &net,
            &bound,
            features,
            queries,
            targets,
            &[1.0, 1.0, 1.0],
        )
        .unwrap();
        let r: Vec<f64> = tape.value(&nodes.residual).column(0).to_vec();
        let u: Vec<f64> = tape.value(&nodes.u).column(0).to_vec();
        let expected = reference_loss(&r, &u);
        let got = tape.value(&nodes.loss)[(0, 0)];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn stationary_point_of_the_u_profile() {
        // For fixed r = 0.5, minimizing exp(-U) r + U over U numerically
        // lands on U* = ln 0.5 with value 1 + ln 0.5.
        let r = 0.5f64;
        let f = |u: f64| (-u).exp() * r + u;
        let mut lo = -5.0;
        let mut hi = 5.0;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if f(m1) < f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let u_star = 0.5 * (lo + hi);
        assert!((u_star - 0.5f64.ln()).abs() < 1e-4, "u* {u_star}");
        assert!((f(u_star) - (1.0 + 0.5f64.ln())).abs() < 1e-4);
    }

    #[test]
    fn zero_residual_zero_u_gives_zero_loss_and_u_increment_is_linear() {
        assert_eq!(reference_loss(&[0.0], &[0.0]), 0.0);
        // At r = 0 the loss is exactly U; doubling U doubles it.
        let base = reference_loss(&[0.0], &[0.7]);
        let doubled = reference_loss(&[0.0], &[1.4]);
        assert!((base - 0.7).abs() < 1e-15);
        assert!((doubled - 1.4).abs() < 1e-15);
    }
}
