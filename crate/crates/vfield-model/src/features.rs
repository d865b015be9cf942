//! Transition features: per consecutive retained observation pair, the
//! tuple (state, displacement, squared displacement, time gap), computed
//! in normalized coordinates and zero-padded to the model width.

use ndarray::Array2;
use vfield_core::CorruptedTrajectory;

use crate::error::ModelError;
use crate::norm::NormalizationState;

/// Feature column layout: y (max_dim) | dy (max_dim) | dy^2 (max_dim) | dtau.
pub const FEATURE_COLS: usize = 10;
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    /// J x FEATURE_COLS matrix in normalized coordinates.
    pub features: Array2<f64>,
    /// True state dimension (1..=3); columns above it are zero.
    pub dimension: usize,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }
}

/// Extract all J = sum(L_k - 1) transitions of a context.
pub fn extract_transitions(
    context: &[CorruptedTrajectory],
    norm: &NormalizationState,
) -> Result<TransitionSet, ModelError> {
    let d = norm.dimension();
    if d > MAX_DIM {
        return Err(ModelError::DimensionTooLarge { got: d, max: MAX_DIM });
    }
    let total: usize = context.iter().map(|t| t.len().saturating_sub(1)).sum();
    if total == 0 {
        return Err(ModelError::EmptyContext);
    }

    let mut features = Array2::zeros((total, FEATURE_COLS));
    let mut row = 0;
    let mut zi = vec![0.0; d];
    let mut zj = vec![0.0; d];
    for traj in context {
        if traj.dimension() != d {
            return Err(ModelError::BadConfig(
                "context trajectories disagree on dimension".into(),
            ));
        }
        for i in 0..traj.len().saturating_sub(1) {
            let gap = traj.times[i + 1] - traj.times[i];
            if !(gap > 0.0) {
                return Err(ModelError::NonIncreasingTimes);
            }
            let xi = traj.observations.row(i);
            let xj = traj.observations.row(i + 1);
            norm.normalize_state(xi.as_slice().unwrap(), &mut zi);
            norm.normalize_state(xj.as_slice().unwrap(), &mut zj);
            for j in 0..d {
                let dy = zj[j] - zi[j];
                features[(row, j)] = zi[j];
                features[(row, MAX_DIM + j)] = dy;
                features[(row, 2 * MAX_DIM + j)] = dy * dy;
            }
            features[(row, 3 * MAX_DIM)] = norm.gamma * gap;
            row += 1;
        }
    }
    Ok(TransitionSet {
        features,
        dimension: d,
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

    fn identity_norm(d: usize) -> NormalizationState {
        NormalizationState {
            mu: vec![0.0; d],
            sigma: vec![1.0; d],
            gamma: 1.0,
            floored: vec![false; d],
        }
    }

    #[test]
    fn single_transition_tuple_matches_definition() {
        let set = extract_transitions(
            &[traj(vec![0.0, 1.0], vec![0.0, 1.0], 1)],
            &identity_norm(1),
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        let row = set.features.row(0);
        // (y, dy, dy^2, dtau) = (0, 1, 1, 1); padded dims zero.
        assert_eq!(row[0], 0.0);
        assert_eq!(row[3], 1.0);
        assert_eq!(row[6], 1.0);
        assert_eq!(row[9], 1.0);
        assert_eq!(row[1], 0.0);
        assert_eq!(row[4], 0.0);
    }

    #[test]
    fn transition_count_follows_the_sum_rule() {
        let t1 = traj((0..100).map(|i| i as f64).collect(), (0..100).map(|i| i as f64).collect(), 1);
        let t2 = traj((0..150).map(|i| i as f64).collect(), (0..150).map(|i| i as f64).collect(), 1);
        let set = extract_transitions(&[t1, t2], &identity_norm(1)).unwrap();
        assert_eq!(set.len(), 248);
    }

    #[test]
    fn duplicated_trajectories_duplicate_rows() {
        let t = traj(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 4.0], 1);
        let set = extract_transitions(&[t.clone(), t], &identity_norm(1)).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.features.row(0), set.features.row(2));
        assert_eq!(set.features.row(1), set.features.row(3));
    }

    #[test]
    fn padded_columns_stay_zero() {
        let t = traj(vec![0.0, 1.0, 2.0], vec![1.0, -1.0, 2.0, -2.0, 3.0, -3.0], 2);
        let set = extract_transitions(&[t], &identity_norm(2)).unwrap();
        for r in 0..set.len() {
            assert_eq!(set.features[(r, 2)], 0.0);
            assert_eq!(set.features[(r, 5)], 0.0);
            assert_eq!(set.features[(r, 8)], 0.0);
        }
    }
}
