//! Per-context instance normalization.
//!
//! States are z-scored per dimension over the truncated observation set
//! (every observation except each trajectory's last, which never serves
//! as a transition source). Times are rescaled by `gamma` so the
//! geometric mean of the observation gaps lands on `DELTA_TAU_TARGET`.
//! Both transforms are invertible; predicted fields map back to original
//! units via multiplication by `sigma * gamma` (chain rule).

use vfield_core::CorruptedTrajectory;

use crate::error::ModelError;

pub const DELTA_TAU_TARGET: f64 = 0.01;
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: f64,
    /// Dimensions whose standard deviation was floored at `SIGMA_FLOOR`.
    pub floored: Vec<bool>,
}

impl NormalizationState {
    pub fn dimension(&self) -> usize {
        self.mu.len()
    }

    pub fn normalize_state(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.mu.len() {
            out[j] = (x[j] - self.mu[j]) / self.sigma[j];
        }
    }

    pub fn denormalize_state(&self, z: &[f64], out: &mut [f64]) {
        for j in 0..self.mu.len() {
            out[j] = z[j] * self.sigma[j] + self.mu[j];
        }
    }

    /// Per-dimension factor mapping a normalized-space field value back
    /// to original units.
    pub fn field_denorm_factors(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * self.gamma).collect()
    }
}

/// Fit normalization statistics from a context of corrupted trajectories.
pub fn fit_normalization(context: &[CorruptedTrajectory]) -> Result<NormalizationState, ModelError> {
    let d = context.first().map(|t| t.dimension()).ok_or(ModelError::EmptyContext)?;
    let mut count = 0usize;
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    let mut log_gap_sum = 0.0;
    let mut gap_count = 0usize;

    for traj in context {
        if traj.dimension() != d {
            return Err(ModelError::BadConfig(
                "context trajectories disagree on dimension".into(),
            ));
        }
        if traj.len() < 2 {
            return Err(ModelError::EmptyContext);
        }
        // Truncated set: drop the last observation of each trajectory.
        for row in traj.observations.rows().into_iter().take(traj.len() - 1) {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite { context: "observations" });
                }
                sum[j] += v;
                sumsq[j] += v * v;
            }
            count += 1;
        }
        for w in traj.times.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) {
                return Err(ModelError::NonIncreasingTimes);
            }
            log_gap_sum += gap.ln();
            gap_count += 1;
        }
    }
    if count == 0 || gap_count == 0 {
        return Err(ModelError::EmptyContext);
    }

    let n = count as f64;
    let mut mu = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    let mut floored = vec![false; d];
    for j in 0..d {
        mu[j] = sum[j] / n;
        let var = (sumsq[j] / n - mu[j] * mu[j]).max(0.0);
        let s = var.sqrt();
        if s < SIGMA_FLOOR {
            sigma[j] = SIGMA_FLOOR;
            floored[j] = true;
        } else {
            sigma[j] = s;
        }
    }

    // gamma = target / geometric-mean(gaps), computed in log space so a
    // context already at the target gap yields exactly 1.
    let mean_log_gap = log_gap_sum / gap_count as f64;
    let gamma = (DELTA_TAU_TARGET.ln() - mean_log_gap).exp();

    Ok(NormalizationState {
        mu,
        sigma,
        gamma,
        floored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn traj(times: Vec<f64>, flat: Vec<f64>, d: usize) -> CorruptedTrajectory {
        let n = times.len();
        CorruptedTrajectory {
            times,
            observations: Array2::from_shape_vec((n, d), flat).unwrap(),
            keep_mask: vec![true; n],
        }
    }

    #[test]
    fn uniform_gap_at_target_gives_gamma_exactly_one() {
        // Times whose computed gaps are bit-identical to the target:
        // 0.02 - 0.01 is exact by Sterbenz, so both gaps equal fl(0.01)
        // and the log-space formula cancels to exp(0) = 1 exactly.
        let norm =
            fit_normalization(&[traj(vec![0.0, 0.01, 0.02], vec![1.0, 2.0, 4.0], 1)]).unwrap();
        assert_eq!(norm.gamma, 1.0);
        // A long grid built from i * 0.01 has gaps a few ulps apart; gamma
        // still lands on 1 to high precision.
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let vals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let norm = fit_normalization(&[traj(times, vals, 1)]).unwrap();
        assert!((norm.gamma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_gap_005_gives_gamma_02() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let vals: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let norm = fit_normalization(&[traj(times, vals, 1)]).unwrap();
        assert!((norm.gamma - 0.2).abs() < 1e-12, "gamma {}", norm.gamma);
        // Normalized gaps land exactly on the target.
        assert!((norm.gamma * 0.05 - DELTA_TAU_TARGET).abs() < 1e-14);
    }

    #[test]
    fn constant_trajectory_floors_sigma() {
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let vals = vec![4.0; 10];
        let norm = fit_normalization(&[traj(times, vals, 1)]).unwrap();
        assert_eq!(norm.sigma[0], SIGMA_FLOOR);
        assert!(norm.floored[0]);
        let mut z = [0.0];
        norm.normalize_state(&[4.0], &mut z);
        assert!(z[0].is_finite());
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.03).collect();
        let vals: Vec<f64> = (0..200).map(|i| (i as f64 * 0.17).cos() * 7.0 + 3.0).collect();
        let norm = fit_normalization(&[traj(times, vals, 2)]).unwrap();
        for x in [[-2.0, 5.5], [0.0, 0.0], [17.0, -4.0]] {
            let mut z = [0.0; 2];
            let mut back = [0.0; 2];
            norm.normalize_state(&x, &mut z);
            norm.denormalize_state(&z, &mut back);
            for j in 0..2 {
                assert!((back[j] - x[j]).abs() <= 1e-9 * x[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn mean_excludes_last_observation() {
        // Two observations: only the first enters the statistics.
        let norm = fit_normalization(&[traj(vec![0.0, 1.0], vec![2.0, 100.0], 1)]).unwrap();
        assert_eq!(norm.mu[0], 2.0);
    }

    #[test]
    fn duplicate_timestamps_are_rejected() {
        let r = fit_normalization(&[traj(vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 3.0], 1)]);
        assert!(matches!(r, Err(ModelError::NonIncreasingTimes)));
    }
}
