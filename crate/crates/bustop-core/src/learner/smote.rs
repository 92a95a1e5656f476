//! Synthetic minority oversampling by interpolation between nearest
//! neighbors, with neighbor distances computed on min-max-scaled features so
//! large-range features do not dominate.

use super::LearnError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Index of the binary f13 feature, re-rounded after interpolation.
const BINARY_FEATURE: usize = 12;

fn minmax_scale(rows: &[[f64; 13]]) -> Vec<[f64; 13]> {
    let mut lo = [f64::INFINITY; 13];
    let mut hi = [f64::NEG_INFINITY; 13];
    for row in rows {
        for i in 0..13 {
            lo[i] = lo[i].min(row[i]);
            hi[i] = hi[i].max(row[i]);
        }
    }
    rows.iter()
        .map(|row| {
            let mut out = [0.0; 13];
            for i in 0..13 {
                let span = hi[i] - lo[i];
                out[i] = if span > 0.0 { (row[i] - lo[i]) / span } else { 0.0 };
            }
            out
        })
        .collect()
}

/// Generate `n_synthetic` rows, each `x + u * (x_nn - x)` for a random
/// minority row, one of its `k_neighbors` nearest minority neighbors and
/// `u` uniform in [0, 1].
pub fn smote(
    minority_rows: &[[f64; 13]],
    k_neighbors: usize,
    n_synthetic: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<[f64; 13]>, LearnError> {
    if minority_rows.len() < 2 {
        return Err(LearnError::TooFewMinoritySamples(minority_rows.len()));
    }
    let k = k_neighbors.clamp(1, minority_rows.len() - 1);
    let scaled = minmax_scale(minority_rows);

    // k nearest neighbors per row in scaled space, ties by lower index
    let neighbors: Vec<Vec<usize>> = (0..scaled.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = scaled
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, row)| {
                    let d: f64 = row
                        .iter()
                        .zip(&scaled[i])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            others.truncate(k);
            others.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    Ok((0..n_synthetic)
        .map(|_| {
            let i = rng.gen_range(0..minority_rows.len());
            let nn = neighbors[i][rng.gen_range(0..neighbors[i].len())];
            let u: f64 = rng.gen_range(0.0..=1.0);
            let mut row = [0.0; 13];
            for f in 0..13 {
                row[f] = minority_rows[i][f] + u * (minority_rows[nn][f] - minority_rows[i][f]);
            }
            row[BINARY_FEATURE] = row[BINARY_FEATURE].round().clamp(0.0, 1.0);
            row
        })
        .collect())
}
