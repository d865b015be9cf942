//! Observation model: multiplicative Gaussian noise and Bernoulli
//! subsampling. One noise scale is shared across all trajectories of a
//! system; keep-masks are independent per trajectory.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::simulate::{Trajectory, TrajectorySet};

/// Concrete corruption parameters for one system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    /// Multiplicative noise scale; y = (1 + eps) x with eps ~ N(0, sigma^2).
    pub sigma: f64,
    /// Independent per-observation drop probability.
    pub rho: f64,
}

impl CorruptionConfig {
    pub fn new(sigma: f64, rho: f64) -> Self {
        assert!(sigma >= 0.0, "sigma must be non-negative");
        assert!((0.0..1.0).contains(&rho), "rho must lie in [0, 1)");
        Self { sigma, rho }
    }
}

/// A noisy, subsampled view of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedTrajectory {
    /// Times of the retained observations, strictly increasing.
    pub times: Vec<f64>,
    /// Retained noisy states, one row per retained observation.
    pub observations: Array2<f64>,
    /// Keep decision per original grid point.
    pub keep_mask: Vec<bool>,
}

impl CorruptedTrajectory {
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    pub fn dimension(&self) -> usize {
        self.observations.ncols()
    }
}

/// Apply y = (1 + sigma * eps) x entrywise with eps ~ N(0, 1).
///
/// sigma = 0 returns the input bit-exactly (the RNG is still consumed so
/// the stream layout does not depend on sigma).
pub fn apply_noise<R: Rng>(states: &Array2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    assert!(sigma >= 0.0);
    let mut noisy = states.clone();
    for v in noisy.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v *= 1.0 + sigma * eps;
    }
    noisy
}

/// Independent keep/drop decisions over a length-`len` grid. If fewer
/// than two observations survive, the first and last are force-retained
/// so transitions remain well defined.
pub fn subsample<R: Rng>(len: usize, rho: f64, rng: &mut R) -> Vec<bool> {
    assert!(len >= 2, "need at least two observations");
    assert!((0.0..1.0).contains(&rho));
    let mut mask: Vec<bool> = (0..len).map(|_| !rng.gen_bool(rho)).collect();
    if mask.iter().filter(|&&k| k).count() < 2 {
        mask[0] = true;
        mask[len - 1] = true;
    }
    mask
}

/// Corrupt all trajectories of a system with a shared sigma and
/// independent masks. Draw order per trajectory: noise first, then mask.
pub fn corrupt_system<R: Rng>(
    set: &TrajectorySet,
    config: &CorruptionConfig,
    rng: &mut R,
) -> Vec<CorruptedTrajectory> {
    set.trajectories
        .iter()
        .map(|traj| corrupt_trajectory(traj, config, rng))
        .collect()
}

fn corrupt_trajectory<R: Rng>(
    traj: &Trajectory,
    config: &CorruptionConfig,
    rng: &mut R,
) -> CorruptedTrajectory {
    let noisy = apply_noise(&traj.states, config.sigma, rng);
    let keep_mask = subsample(traj.len(), config.rho, rng);
    let kept: Vec<usize> = keep_mask
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| i)
        .collect();
    let d = traj.dimension();
    let mut observations = Array2::zeros((kept.len(), d));
    let mut times = Vec::with_capacity(kept.len());
    for (row, &i) in kept.iter().enumerate() {
        times.push(traj.times[i]);
        observations.row_mut(row).assign(&noisy.row(i));
    }
    CorruptedTrajectory {
        times,
        observations,
        keep_mask,
    }
}
