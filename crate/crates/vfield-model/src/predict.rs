//! Inference-mode conditioning: fit normalization on a context, encode it
//! once, then evaluate the estimated field anywhere in state space.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use vfield_core::{CorruptedTrajectory, VectorField};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::features::{extract_transitions, MAX_DIM};
use crate::graph::{Cx, Eager};
use crate::net::{Bound, DecoderCache, ModelNet};
use crate::norm::{fit_normalization, NormalizationState};
use crate::params::ParamSet;

type H = Arc<Array2<f64>>;

/// A context-conditioned field estimator. Encoding happens once at
/// construction; evaluations are pure and deterministic (dropout off).
///
/// Not `Sync`: create one predictor per thread when parallelizing.
pub struct Predictor {
    net: Arc<ModelNet>,
    norm: NormalizationState,
    dimension: usize,
    cx: RefCell<Eager>,
    bound: Bound<H>,
    cache: DecoderCache<H>,
    denorm: Vec<f64>,
}

impl Predictor {
    pub fn fit(
        net: Arc<ModelNet>,
        params: Arc<ParamSet>,
        context: &[CorruptedTrajectory],
    ) -> Result<Self, ModelError> {
        let norm = fit_normalization(context)?;
        let transitions = extract_transitions(context, &norm)?;
        let dimension = transitions.dimension;
        let mut cx = Eager::new(params);
        let bound = net.bind(&mut cx);
        let fh = cx.constant(transitions.features);
        let emb = net.embed_transitions(&mut cx, &bound, &fh);
        let encoded = net.encode(&mut cx, &bound, &emb, None)?;
        let cache = net.decoder_cache(&mut cx, &bound, &encoded, None);
        let denorm = norm.field_denorm_factors();
        Ok(Self {
            net,
            norm,
            dimension,
            cx: RefCell::new(cx),
            bound,
            cache,
            denorm,
        })
    }

    pub fn normalization(&self) -> &NormalizationState {
        &self.norm
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.cfg
    }

    /// Evaluate the field and the log-variance head at original-coordinate
    /// locations (rows of `xs`).
    pub fn eval_batch(&self, xs: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>), ModelError> {
        let d = self.dimension;
        if xs.ncols() != d {
            return Err(ModelError::BadConfig(format!(
                "query dimension {} does not match context dimension {d}",
                xs.ncols()
            )));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { context: "query locations" });
        }
        let q = xs.nrows();
        let mut padded = Array2::zeros((q, MAX_DIM));
        let mut z = vec![0.0; d];
        for (i, row) in xs.rows().into_iter().enumerate() {
            self.norm.normalize_state(row.as_slice().unwrap(), &mut z);
            for j in 0..d {
                padded[(i, j)] = z[j];
            }
        }
        let mut cx = self.cx.borrow_mut();
        let qh = cx.constant(padded);
        let (field_n, u_n) = self.net.decode(&mut *cx, &self.bound, &self.cache, &qh);
        let fv = cx.value(&field_n);
        let mut field = Array2::zeros((q, d));
        for i in 0..q {
            for j in 0..d {
                field[(i, j)] = fv[(i, j)] * self.denorm[j];
            }
        }
        let u = cx.value(&u_n).column(0).to_vec();
        Ok((field, u))
    }
}

impl VectorField for Predictor {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row query");
        let (field, _) = self.eval_batch(&xs).expect("finite query");
        out.copy_from_slice(field.row(0).as_slice().unwrap());
    }
}

/// One-shot convenience: condition on `context` and evaluate at `x`.
pub fn predict_field(
    net: Arc<ModelNet>,
    params: Arc<ParamSet>,
    context: &[CorruptedTrajectory],
    x: &[f64],
) -> Result<Vec<f64>, ModelError> {
    let p = Predictor::fit(net, params, context)?;
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|_| ModelError::BadConfig("bad query shape".into()))?;
    let (field, _) = p.eval_batch(&xs)?;
    Ok(field.row(0).to_vec())
}
