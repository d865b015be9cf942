//! Coefficient of determination, per dimension and variance weighted.

use ndarray::Array2;

/// Per-dimension R² plus the variance-weighted aggregate. Dimensions
/// with constant truth are excluded (R² undefined) and the weights are
/// renormalized over the remaining ones.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Result {
    pub per_dim: Vec<Option<f64>>,
    pub weighted: Option<f64>,
    pub excluded: Vec<usize>,
}

pub fn r2_score(predicted: &Array2<f64>, truth: &Array2<f64>) -> R2Result {
    assert_eq!(predicted.dim(), truth.dim(), "series shapes must agree");
    let (n, d) = truth.dim();
    assert!(n >= 2, "need at least two samples");

    let mut per_dim = vec![None; d];
    let mut excluded = Vec::new();
    let mut variances = vec![0.0; d];
    for j in 0..d {
        let col = truth.column(j);
        let mean = col.sum() / n as f64;
        let sst: f64 = col.iter().map(|&v| (v - mean) * (v - mean)).sum();
        if sst == 0.0 {
            excluded.push(j);
            continue;
        }
        let sse: f64 = predicted
            .column(j)
            .iter()
            .zip(col.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        per_dim[j] = Some(1.0 - sse / sst);
        variances[j] = sst / n as f64;
    }

    let total_var: f64 = variances.iter().sum();
    let weighted = if total_var > 0.0 {
        Some(
            (0..d)
                .filter_map(|j| per_dim[j].map(|r| variances[j] / total_var * r))
                .sum(),
        )
    } else {
        None
    };
    R2Result {
        per_dim,
        weighted,
        excluded,
    }
}
