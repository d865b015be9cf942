//! Query construction for the field loss: half the locations come from
//! observed trajectory states, half are uniform on the expanded bounding
//! box; targets are exact field evaluations (available in pretraining).

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vfield_core::VectorField;
use vfield_data::{QuerySet, SystemRecord};

pub fn sample_query_locations(
    record: &SystemRecord,
    n_queries: usize,
    rng: &mut ChaCha8Rng,
) -> QuerySet {
    let d = record.dimension();
    let n_box = n_queries / 2;
    let n_traj = n_queries - n_box;

    // Pool of observed states across all corrupted trajectories.
    let pool: Vec<(usize, usize)> = record
        .corrupted
        .iter()
        .enumerate()
        .flat_map(|(k, c)| (0..c.len()).map(move |i| (k, i)))
        .collect();

    let mut locations = Array2::zeros((n_queries, d));
    let mut targets = Array2::zeros((n_queries, d));
    let mut value = vec![0.0; d];
    for q in 0..n_traj {
        let (k, i) = pool[rng.gen_range(0..pool.len())];
        let row = record.corrupted[k].observations.row(i);
        locations.row_mut(q).assign(&row);
    }
    for q in n_traj..n_queries {
        for j in 0..d {
            let (lo, hi) = (record.boxed.low[j], record.boxed.high[j]);
            locations[(q, j)] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        }
    }
    for q in 0..n_queries {
        record
            .field
            .eval_into(locations.row(q).as_slice().unwrap(), &mut value);
        for j in 0..d {
            targets[(q, j)] = value[j];
        }
    }
    QuerySet { locations, targets }
}
