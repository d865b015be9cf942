//! Reconstruction and generalization scoring: corrupt a context, condition
//! an estimator on it, integrate the estimated field on the task grid, and
//! score against a high-accuracy reference solution of the true field.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use vfield_core::{
    corrupt_system, integrate_euler, integrate_rk4, CorruptedTrajectory, CorruptionConfig,
    IntegrationResult, TimeGrid, TrajectorySet, VectorField,
};
use vfield_data::SystemRecord;
use vfield_model::{ModelError, ModelNet, ParamSet, Predictor};

use crate::demo::DemoSystem;
use crate::r2::r2_score;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference solution diverged for {0}")]
    ReferenceDiverged(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Core(#[from] vfield_core::CoreError),
}

/// Output grid of the scoring protocol: 512 equidistant points over the
/// reference window, integrated with 20 Euler substeps per interval
/// (matching data generation).
#[derive(Debug, Clone, Copy)]
pub struct EvalGridSpec {
    pub n_points: usize,
    pub substeps: usize,
}

impl Default for EvalGridSpec {
    fn default() -> Self {
        Self {
            n_points: 512,
            substeps: 20,
        }
    }
}

/// Context corruption for a task cell.
#[derive(Debug, Clone, Copy)]
pub struct TaskSpec {
    pub sigma: f64,
    pub rho: f64,
}

/// One system under evaluation: its true field, a clean context source,
/// and the reconstruction initial condition.
pub struct EvalCase<'a> {
    pub name: String,
    pub true_field: &'a dyn VectorField,
    pub chaotic: bool,
    pub window: (f64, f64),
    pub context_clean: TrajectorySet,
    pub x0: Vec<f64>,
}

impl<'a> EvalCase<'a> {
    /// Case backed by a stored record: the context source is its clean
    /// trajectories (the first `context_k` of them) and reconstruction
    /// starts from trajectory 0's initial state.
    pub fn from_record(record: &'a SystemRecord, context_k: usize) -> Self {
        let k = context_k.clamp(1, record.clean.trajectories.len());
        let context_clean = TrajectorySet {
            grid: record.grid,
            trajectories: record.clean.trajectories[..k].to_vec(),
        };
        Self {
            name: format!("d{}:{}", record.provenance.dimension, record.provenance.index),
            true_field: &record.field,
            chaotic: false,
            window: (record.grid.t_start, record.grid.t_end),
            context_clean,
            x0: record.clean.trajectories[0].states.row(0).to_vec(),
        }
    }

    /// Case backed by a demo system: the context source is the reference
    /// solution itself on the task grid.
    pub fn from_demo(demo: &'a DemoSystem, spec: &EvalGridSpec) -> Result<Self, EvalError> {
        let grid = TimeGrid::new(demo.window.0, demo.window.1, spec.n_points, spec.substeps)
            .expect("demo window is valid");
        let reference = match integrate_rk4(demo, &demo.default_x0, &grid) {
            IntegrationResult::Complete(t) => t,
            IntegrationResult::Diverged { .. } => {
                return Err(EvalError::ReferenceDiverged(demo.name.to_string()))
            }
        };
        Ok(Self {
            name: demo.name.to_string(),
            true_field: demo,
            chaotic: demo.chaotic,
            window: demo.window,
            context_clean: TrajectorySet {
                grid,
                trajectories: vec![reference],
            },
            x0: demo.default_x0.clone(),
        })
    }

    pub fn task_grid(&self, spec: &EvalGridSpec) -> TimeGrid {
        TimeGrid::new(self.window.0, self.window.1, spec.n_points, spec.substeps)
            .expect("window is valid")
    }
}

/// What produces the field estimate: a plain field (oracle, baselines)
/// or the model conditioned on the task's corrupted context.
pub enum Estimator<'a> {
    Field(&'a dyn VectorField),
    Model {
        net: Arc<ModelNet>,
        params: Arc<ParamSet>,
    },
}

struct FieldRef<'a>(&'a dyn VectorField);

impl VectorField for FieldRef<'_> {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.eval_into(x, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskScore {
    pub r2: Option<f64>,
    pub diverged: bool,
    pub chaotic_caveat: bool,
}

impl TaskScore {
    pub fn success(&self, threshold: f64) -> bool {
        self.r2.is_some_and(|r| r > threshold)
    }
}

/// Corrupt the clean context with the pretraining observation model.
pub fn build_context(
    clean: &TrajectorySet,
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<CorruptedTrajectory> {
    corrupt_system(clean, &CorruptionConfig::new(task.sigma, task.rho), rng)
}

fn conditioned<'a>(
    est: &'a Estimator<'a>,
    context: &[CorruptedTrajectory],
) -> Result<Box<dyn VectorField + 'a>, EvalError> {
    match est {
        Estimator::Field(f) => Ok(Box::new(FieldRef(*f))),
        Estimator::Model { net, params } => Ok(Box::new(Predictor::fit(
            net.clone(),
            params.clone(),
            context,
        )?)),
    }
}

fn score_rollout(
    estimate: &dyn VectorField,
    case: &EvalCase,
    spec: &EvalGridSpec,
    x0: &[f64],
) -> Result<TaskScore, EvalError> {
    let grid = case.task_grid(spec);
    let reference = match integrate_rk4(case.true_field, x0, &grid) {
        IntegrationResult::Complete(t) => t,
        IntegrationResult::Diverged { .. } => {
            return Err(EvalError::ReferenceDiverged(case.name.clone()))
        }
    };
    let rollout = match integrate_euler(estimate, x0, &grid) {
        IntegrationResult::Complete(t) => t,
        IntegrationResult::Diverged { .. } => {
            return Ok(TaskScore {
                r2: None,
                diverged: true,
                chaotic_caveat: case.chaotic,
            })
        }
    };
    let r = r2_score(&rollout.states, &reference.states);
    Ok(TaskScore {
        r2: r.weighted,
        diverged: false,
        chaotic_caveat: case.chaotic,
    })
}

/// Integrate the conditioned estimate from the ground-truth initial
/// condition and score against the clean reference.
pub fn run_reconstruction(
    est: &Estimator,
    case: &EvalCase,
    spec: &EvalGridSpec,
    task: &TaskSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TaskScore, EvalError> {
    let context = build_context(&case.context_clean, task, rng);
    let estimate = conditioned(est, &context)?;
    score_rollout(estimate.as_ref(), case, spec, &case.x0)
}

/// Same scoring from held-out initial conditions; the mean weighted R²
/// over the supplied conditions is returned, and any divergent rollout
/// marks the whole case failed.
pub fn run_generalization(
    est: &Estimator,
    case: &EvalCase,
    spec: &EvalGridSpec,
    task: &TaskSpec,
    initial_conditions: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<TaskScore, EvalError> {
    assert!(!initial_conditions.is_empty());
    let context = build_context(&case.context_clean, task, rng);
    let estimate = conditioned(est, &context)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for x0 in initial_conditions {
        let score = score_rollout(estimate.as_ref(), case, spec, x0)?;
        match score.r2 {
            Some(r) if !score.diverged => {
                acc += r;
                count += 1;
            }
            _ => {
                return Ok(TaskScore {
                    r2: None,
                    diverged: true,
                    chaotic_caveat: case.chaotic,
                })
            }
        }
    }
    Ok(TaskScore {
        r2: Some(acc / count as f64),
        diverged: false,
        chaotic_caveat: case.chaotic,
    })
}

/// Fraction of scores exceeding `threshold`; failures count against.
pub fn success_rate(scores: &[TaskScore], threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|s| s.success(threshold)).count() as f64 / scores.len() as f64
}

/// Field metrics on a record's stored target samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VfMetrics {
    pub rmse: f64,
    pub mean_cosine: f64,
    /// Sample pairs excluded from the cosine mean (near-zero vectors).
    pub excluded_pairs: usize,
}

pub fn vf_metrics(estimate: &dyn VectorField, record: &SystemRecord) -> VfMetrics {
    let d = record.dimension();
    let mut sq = 0.0;
    let mut cos_sum = 0.0;
    let mut cos_n = 0usize;
    let mut excluded = 0usize;
    let mut pred = vec![0.0; d];
    for s in &record.vf_targets {
        estimate.eval_into(&s.location, &mut pred);
        let mut dot = 0.0;
        let mut np = 0.0;
        let mut nt = 0.0;
        for j in 0..d {
            let e = pred[j] - s.value[j];
            sq += e * e;
            dot += pred[j] * s.value[j];
            np += pred[j] * pred[j];
            nt += s.value[j] * s.value[j];
        }
        let (np, nt) = (np.sqrt(), nt.sqrt());
        if np < 1e-12 || nt < 1e-12 {
            excluded += 1;
        } else {
            cos_sum += dot / (np * nt);
            cos_n += 1;
        }
    }
    let n = record.vf_targets.len().max(1);
    VfMetrics {
        rmse: (sq / (n * d) as f64).sqrt(),
        mean_cosine: if cos_n > 0 { cos_sum / cos_n as f64 } else { f64::NAN },
        excluded_pairs: excluded,
    }
}

/// Additive-noise corruption used by the oscillator benchmarks; distinct
/// from the multiplicative pretraining observation model.
pub fn add_observation_noise(
    states: &Array2<f64>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut out = states.clone();
    for v in out.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v += sigma * eps;
    }
    out
}

/// Wrap raw observation rows as a fully retained corrupted trajectory;
/// benchmark contexts supply their own time grids.
pub fn trajectory_from_rows(times: Vec<f64>, observations: Array2<f64>) -> CorruptedTrajectory {
    let n = times.len();
    CorruptedTrajectory {
        times,
        observations,
        keep_mask: vec![true; n],
    }
}
