//! AdamW with decoupled weight decay, plus global gradient-norm clipping.

use std::sync::Arc;

use ndarray::Array2;
use vfield_model::ParamSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .arrays
            .iter()
            .map(|a| Array2::zeros(a.raw_dim()))
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One decoupled-decay adaptive-moment update. `grads` must be
    /// aligned with `params.arrays`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) {
        assert_eq!(params.arrays.len(), grads.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.cfg.learning_rate;
        let wd = self.cfg.weight_decay;

        for i in 0..params.arrays.len() {
            let mut new = params.arrays[i].as_ref().clone();
            ndarray::Zip::from(&mut new)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads[i])
                .for_each(|w, mi, vi, &gi| {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *w -= lr * (mhat / (vhat.sqrt() + self.cfg.epsilon)) + lr * wd * *w;
                });
            params.arrays[i] = Arc::new(new);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use vfield_model::{ModelConfig, ParamSpec};

    fn small_params() -> ParamSet {
        let spec = ParamSpec::for_config(&ModelConfig::tiny());
        ParamSet::init(&spec, &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn zero_gradient_step_is_pure_decay() {
        let mut params = small_params();
        let before = params.clone();
        let grads: Vec<Array2<f64>> = params
            .arrays
            .iter()
            .map(|a| Array2::zeros(a.raw_dim()))
            .collect();
        let cfg = AdamWConfig::new(1e-3, 1e-2);
        let mut opt = AdamW::new(cfg, &params);
        opt.step(&mut params, &grads);
        for (new, old) in params.arrays.iter().zip(&before.arrays) {
            for (w1, w0) in new.iter().zip(old.iter()) {
                let expected = w0 - cfg.learning_rate * cfg.weight_decay * w0;
                assert_eq!(*w1, expected);
            }
        }
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut grads = vec![
            Array2::from_elem((4, 4), 3.0),
            Array2::from_elem((2, 8), -4.0),
        ];
        let pre = clip_global_norm(&mut grads, 10.0);
        assert!(pre > 10.0);
        let post = grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!((post - 10.0).abs() < 1e-6, "post-clip norm {post}");
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let mut grads = vec![Array2::from_elem((2, 2), 0.1)];
        let copy = grads[0].clone();
        clip_global_norm(&mut grads, 10.0);
        assert_eq!(grads[0], copy);
    }
}
