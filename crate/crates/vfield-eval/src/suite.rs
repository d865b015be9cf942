//! Oscillator benchmarks: Van der Pol forecasting (uniform and irregular
//! observation times) and FitzHugh-Nagumo imputation with quadrant
//! removal. Each trial redraws the noise (and, for the irregular task,
//! the time grid), runs zero-shot inference, optionally finetunes, and
//! scores test MSE on the held-out region.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use vfield_core::seed::{stream, tags};
use vfield_core::{integrate_euler_at, integrate_rk4_at, IntegrationResult, VectorField};
use vfield_model::Predictor;
use vfield_train::{finetune, FinetuneConfig};

use crate::demo::{fitzhugh_nagumo, van_der_pol};
use crate::tasks::{add_observation_noise, trajectory_from_rows, Estimator, EvalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteTask {
    VdpUniform,
    VdpIrregular,
    FhnImputation,
}

impl SuiteTask {
    pub fn name(&self) -> &'static str {
        match self {
            SuiteTask::VdpUniform => "vdp-task1",
            SuiteTask::VdpIrregular => "vdp-task2",
            SuiteTask::FhnImputation => "fhn",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub task: SuiteTask,
    pub n_trials: usize,
    pub seed: u64,
    /// Euler substeps per interval when integrating estimates.
    pub eval_substeps: usize,
    pub finetune: Option<FinetuneConfig>,
}

impl SuiteConfig {
    pub fn new(task: SuiteTask, n_trials: usize, seed: u64) -> Self {
        Self {
            task,
            n_trials,
            seed,
            eval_substeps: 20,
            finetune: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub context_len: usize,
    pub zero_shot_mse: Option<f64>,
    pub finetuned_mse: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub n_trials: usize,
    pub n_failures: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub task: SuiteTask,
    pub trials: Vec<TrialResult>,
    pub zero_shot: SuiteSummary,
    pub finetuned: Option<SuiteSummary>,
}

/// One trial's data: context observations and held-out clean targets.
pub struct TrialData {
    pub context_times: Vec<f64>,
    pub context_obs: Array2<f64>,
    pub test_times: Vec<f64>,
    pub test_clean: Array2<f64>,
    pub x0: Vec<f64>,
}

fn reference_states(
    field: &dyn VectorField,
    x0: &[f64],
    times: &[f64],
    substeps: usize,
) -> Result<Array2<f64>, EvalError> {
    match integrate_rk4_at(field, x0, times, substeps) {
        IntegrationResult::Complete(t) => Ok(t.states),
        IntegrationResult::Diverged { .. } => {
            Err(EvalError::ReferenceDiverged("oscillator reference".into()))
        }
    }
}

fn rows_at(times: &[f64], all_times: &[f64], states: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((times.len(), states.ncols()));
    for (r, t) in times.iter().enumerate() {
        let i = all_times
            .iter()
            .position(|&u| u == *t)
            .expect("sample time on the reference grid");
        out.row_mut(r).assign(&states.row(i));
    }
    out
}

/// Build one trial's dataset. Noise (and the irregular grid for the
/// second task) comes from the trial stream; everything else is fixed by
/// the protocol: 50 context observations with additive noise of variance
/// 0.05 on the first half window for VDP, 25 regular observations with
/// variance 0.025 and quadrant removal for FHN.
pub fn build_trial(task: SuiteTask, seed: u64, trial: usize) -> Result<TrialData, EvalError> {
    let mut rng = stream(seed, &[tags::TRIAL, trial as u64]);
    match task {
        SuiteTask::VdpUniform | SuiteTask::VdpIrregular => {
            let system = van_der_pol();
            let x0 = system.default_x0.clone();
            let context_times: Vec<f64> = match task {
                SuiteTask::VdpUniform => (0..50).map(|i| i as f64 * (7.0 / 50.0)).collect(),
                _ => {
                    let mut ts: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..7.0)).collect();
                    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    ts.dedup_by(|a, b| *a == *b);
                    while ts.len() < 50 {
                        ts.push(rng.gen_range(0.0..7.0));
                        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        ts.dedup_by(|a, b| *a == *b);
                    }
                    ts
                }
            };
            let test_times: Vec<f64> = (0..50).map(|i| 7.0 + i as f64 * (7.0 / 49.0)).collect();

            let mut all_times: Vec<f64> = Vec::new();
            if context_times[0] > 0.0 {
                all_times.push(0.0);
            }
            all_times.extend(&context_times);
            all_times.extend(&test_times);
            all_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all_times.dedup();

            let states = reference_states(&system, &x0, &all_times, 20)?;
            let context_clean = rows_at(&context_times, &all_times, &states);
            let test_clean = rows_at(&test_times, &all_times, &states);
            let context_obs = add_observation_noise(&context_clean, 0.05f64.sqrt(), &mut rng);
            Ok(TrialData {
                context_times,
                context_obs,
                test_times,
                test_clean,
                x0,
            })
        }
        SuiteTask::FhnImputation => {
            let system = fitzhugh_nagumo();
            let x0 = system.default_x0.clone();
            let grid_times: Vec<f64> = (0..25).map(|i| i as f64 * (5.0 / 24.0)).collect();
            let states = reference_states(&system, &x0, &grid_times, 20)?;
            let noisy = add_observation_noise(&states, 0.025f64.sqrt(), &mut rng);
            // Structured missingness: observations in the quadrant
            // x1 > 0, x2 < 0 are removed and become the test targets.
            let mut keep = Vec::new();
            let mut removed = Vec::new();
            for i in 0..grid_times.len() {
                if noisy[(i, 0)] > 0.0 && noisy[(i, 1)] < 0.0 {
                    removed.push(i);
                } else {
                    keep.push(i);
                }
            }
            if keep.len() < 2 || removed.is_empty() {
                // Degenerate draws keep the trial well posed.
                keep = (0..24).collect();
                removed = vec![24];
            }
            let select = |idx: &[usize], m: &Array2<f64>| {
                let mut out = Array2::zeros((idx.len(), 2));
                for (r, &i) in idx.iter().enumerate() {
                    out.row_mut(r).assign(&m.row(i));
                }
                out
            };
            Ok(TrialData {
                context_times: keep.iter().map(|&i| grid_times[i]).collect(),
                context_obs: select(&keep, &noisy),
                test_times: removed.iter().map(|&i| grid_times[i]).collect(),
                test_clean: select(&removed, &states),
                x0,
            })
        }
    }
}

/// Integrate an estimate from the clean initial state through the union
/// grid and return MSE at the test times; divergence yields None.
pub fn forecast_mse(
    estimate: &dyn VectorField,
    data: &TrialData,
    substeps: usize,
) -> Option<f64> {
    let mut union: Vec<f64> = Vec::with_capacity(1 + data.context_times.len() + data.test_times.len());
    union.push(0.0);
    union.extend(&data.context_times);
    union.extend(&data.test_times);
    union.sort_by(|a, b| a.partial_cmp(b).unwrap());
    union.dedup();
    let rollout = match integrate_euler_at(estimate, &data.x0, &union, substeps) {
        IntegrationResult::Complete(t) => t,
        IntegrationResult::Diverged { .. } => return None,
    };
    let pred = rows_at(&data.test_times, &union, &rollout.states);
    let n = (pred.nrows() * pred.ncols()) as f64;
    let mse = pred
        .iter()
        .zip(data.test_clean.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    mse.is_finite().then_some(mse)
}

/// MSE of predicting the per-dimension context mean everywhere.
pub fn context_mean_mse(data: &TrialData) -> f64 {
    let d = data.context_obs.ncols();
    let n = data.context_obs.nrows() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| data.context_obs.column(j).sum() / n)
        .collect();
    let total = (data.test_clean.nrows() * d) as f64;
    data.test_clean
        .rows()
        .into_iter()
        .flat_map(|row| {
            row.iter()
                .zip(mean.clone())
                .map(|(&t, m)| (t - m) * (t - m))
                .collect::<Vec<_>>()
        })
        .sum::<f64>()
        / total
}

fn summarize(values: &[Option<f64>]) -> SuiteSummary {
    let finite: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    let n_failures = values.len() - finite.len();
    if finite.is_empty() {
        return SuiteSummary {
            n_trials: values.len(),
            n_failures,
            mean: f64::NAN,
            median: f64::NAN,
            std: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        };
    }
    let mut sorted = finite.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / finite.len() as f64;
    SuiteSummary {
        n_trials: values.len(),
        n_failures,
        mean,
        median: sorted[sorted.len() / 2],
        std: var.sqrt(),
        min: sorted[0],
        max: *sorted.last().unwrap(),
    }
}

/// Run the full suite for a model (or a fixed field, for oracle checks).
pub fn run_vdp_fhn_suite(
    est: &Estimator,
    cfg: &SuiteConfig,
) -> Result<SuiteReport, EvalError> {
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for trial in 0..cfg.n_trials {
        match run_trial(est, cfg, trial) {
            Ok(t) => trials.push(t),
            Err(e) => trials.push(TrialResult {
                trial,
                context_len: 0,
                zero_shot_mse: None,
                finetuned_mse: None,
                failure: Some(e.to_string()),
            }),
        }
    }
    let zero_shot = summarize(&trials.iter().map(|t| t.zero_shot_mse).collect::<Vec<_>>());
    let finetuned = cfg
        .finetune
        .is_some()
        .then(|| summarize(&trials.iter().map(|t| t.finetuned_mse).collect::<Vec<_>>()));
    Ok(SuiteReport {
        task: cfg.task,
        trials,
        zero_shot,
        finetuned,
    })
}

fn run_trial(est: &Estimator, cfg: &SuiteConfig, trial: usize) -> Result<TrialResult, EvalError> {
    let data = build_trial(cfg.task, cfg.seed, trial)?;
    let context = vec![trajectory_from_rows(
        data.context_times.clone(),
        data.context_obs.clone(),
    )];

    let zero_shot_mse = match est {
        Estimator::Field(f) => forecast_mse(*f, &data, cfg.eval_substeps),
        Estimator::Model { net, params } => {
            let predictor = Predictor::fit(net.clone(), params.clone(), &context)?;
            forecast_mse(&predictor, &data, cfg.eval_substeps)
        }
    };

    let finetuned_mse = match (&cfg.finetune, est) {
        (Some(ft_cfg), Estimator::Model { net, params }) => {
            let mut per_trial = ft_cfg.clone();
            per_trial.seed = vfield_core::seed::mix(cfg.seed, &[tags::TRIAL, trial as u64, 0xf7]);
            let outcome = finetune(net, params.as_ref().clone(), &context, None, &per_trial)
                .map_err(|e| EvalError::Model(match e {
                    vfield_train::TrainError::Model(m) => m,
                    other => vfield_model::ModelError::BadConfig(other.to_string()),
                }))?;
            let predictor = Predictor::fit(net.clone(), Arc::new(outcome.params), &context)?;
            forecast_mse(&predictor, &data, cfg.eval_substeps)
        }
        _ => None,
    };

    Ok(TrialResult {
        trial,
        context_len: data.context_times.len(),
        zero_shot_mse,
        finetuned_mse,
        failure: None,
    })
}
