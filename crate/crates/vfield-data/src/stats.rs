//! Dataset statistics: vector-field magnitude binned by relative
//! distance to the bounding-box boundary.

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::record::SystemRecord;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryStats {
    pub dimension: usize,
    pub n_records: usize,
    pub n_samples: usize,
    pub bins: Vec<BinStat>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Bin stored vf-target magnitudes by relative boundary distance.
/// All records must share one dimension; bin edges tile [0, 0.5].
pub fn boundary_statistics(
    records: &[&SystemRecord],
    n_bins: usize,
) -> Result<BoundaryStats, DataError> {
    let dimension = records
        .first()
        .map(|r| r.dimension())
        .ok_or(DataError::BadConfig("no records given".into()))?;
    if records.iter().any(|r| r.dimension() != dimension) {
        return Err(DataError::BadConfig(
            "boundary statistics need records of a single dimension".into(),
        ));
    }
    if n_bins == 0 {
        return Err(DataError::BadConfig("need at least one bin".into()));
    }

    let width = 0.5 / n_bins as f64;
    let mut magnitudes: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut n_samples = 0usize;
    for record in records {
        for sample in &record.vf_targets {
            let rel = record.boxed.relative_boundary_distance(&sample.location);
            let bin = ((rel / width) as usize).min(n_bins - 1);
            let mag = sample.value.iter().map(|v| v * v).sum::<f64>().sqrt();
            magnitudes[bin].push(mag);
            n_samples += 1;
        }
    }

    let bins = magnitudes
        .into_iter()
        .enumerate()
        .map(|(i, mut mags)| {
            mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let count = mags.len();
            let mean = if count > 0 {
                mags.iter().sum::<f64>() / count as f64
            } else {
                f64::NAN
            };
            BinStat {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                count,
                mean,
                median: quantile(&mags, 0.5),
                q25: quantile(&mags, 0.25),
                q75: quantile(&mags, 0.75),
            }
        })
        .collect();

    Ok(BoundaryStats {
        dimension,
        n_records: records.len(),
        n_samples,
        bins,
    })
}

/// Mean magnitude of samples with relative distance below `near` vs
/// above `far`; the near-boundary mean exceeding the central mean is the
/// qualitative signature of the nonstationary prior.
pub fn near_far_means(records: &[&SystemRecord], near: f64, far: f64) -> (f64, f64) {
    let mut near_sum = 0.0;
    let mut near_n = 0usize;
    let mut far_sum = 0.0;
    let mut far_n = 0usize;
    for record in records {
        for sample in &record.vf_targets {
            let rel = record.boxed.relative_boundary_distance(&sample.location);
            let mag = sample.value.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rel < near {
                near_sum += mag;
                near_n += 1;
            } else if rel > far {
                far_sum += mag;
                far_n += 1;
            }
        }
    }
    (near_sum / near_n.max(1) as f64, far_sum / far_n.max(1) as f64)
}

/// Render the stats as an aligned text table.
pub fn render_table(stats: &BoundaryStats) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "boundary magnitude statistics: d={} records={} samples={}\n",
        stats.dimension, stats.n_records, stats.n_samples
    ));
    out.push_str("  rel_dist        count      mean    median       q25       q75\n");
    for b in &stats.bins {
        out.push_str(&format!(
            "  [{:.2},{:.2})  {:9} {:9.4} {:9.4} {:9.4} {:9.4}\n",
            b.lo, b.hi, b.count, b.mean, b.median, b.q25, b.q75
        ));
    }
    out
}
