//! Report assembly: per-system outcomes, success-rate aggregation over a
//! corruption grid, and text-table rendering.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemOutcome {
    pub name: String,
    pub task: String,
    pub sigma: f64,
    pub rho: f64,
    pub seed: u64,
    pub r2: Option<f64>,
    pub diverged: bool,
    pub chaotic_caveat: bool,
    pub vf_rmse: Option<f64>,
    pub vf_cosine: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub estimator: String,
    pub grid_points: usize,
    pub context_k: usize,
    pub outcomes: Vec<SystemOutcome>,
}

impl EvaluationReport {
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut cells: Vec<(f64, f64)> = self
            .outcomes
            .iter()
            .map(|o| (o.rho, o.sigma))
            .collect();
        cells.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cells.dedup();
        cells
    }

    pub fn success_rate(&self, task: &str, rho: f64, sigma: f64, threshold: f64) -> f64 {
        let matching: Vec<&SystemOutcome> = self
            .outcomes
            .iter()
            .filter(|o| o.task == task && o.rho == rho && o.sigma == sigma)
            .collect();
        if matching.is_empty() {
            return 0.0;
        }
        matching
            .iter()
            .filter(|o| o.r2.is_some_and(|r| r > threshold))
            .count() as f64
            / matching.len() as f64
    }

    pub fn tasks(&self) -> Vec<String> {
        let mut tasks: Vec<String> = self.outcomes.iter().map(|o| o.task.clone()).collect();
        tasks.sort();
        tasks.dedup();
        tasks
    }

    /// Success-rate table: one row per (task, threshold), one column per
    /// (rho, sigma) cell.
    pub fn render_table(&self, thresholds: &[f64]) -> String {
        let cells = self.cells();
        let mut out = String::new();
        out.push_str(&format!(
            "estimator: {} | grid: {} points | context K: {}\n",
            self.estimator, self.grid_points, self.context_k
        ));
        out.push_str(&format!("{:<28}", "task / threshold"));
        for (rho, sigma) in &cells {
            out.push_str(&format!(" rho={rho:<4} sig={sigma:<5}"));
        }
        out.push('\n');
        for task in self.tasks() {
            for &th in thresholds {
                out.push_str(&format!("{:<28}", format!("{task} R2>{th}")));
                for (rho, sigma) in &cells {
                    let rate = self.success_rate(&task, *rho, *sigma, th);
                    out.push_str(&format!(" {:>17.1}%", 100.0 * rate));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Raw series for trajectory-overlay and phase-portrait plots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub kind: String,
    pub times: Vec<f64>,
    /// Row-major series values, one row per time point.
    pub truth: Vec<Vec<f64>>,
    pub predicted: Vec<Vec<f64>>,
}
