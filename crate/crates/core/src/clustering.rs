//! Hard assignment and unit-norm centroid updates on cosine similarity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::NORM_GUARD;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::losses::ClusterState;

/// Cap on alternations in [`init_centroids`].
pub const MAX_INIT_ITERS: usize = 300;

/// `Σᵢ μ_{s(i)}ᵀ z̃ᵢ` evaluated directly.
pub fn objective_value(unit: &Matrix, centroids: &Matrix, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &a)| dot(unit.row(i), centroids.row(a)))
        .sum()
}

/// Each row goes to the centroid with the largest cosine; ties to the smaller index.
pub fn update_assignments(unit: &Matrix, centroids: &Matrix) -> Vec<usize> {
    unit.iter_rows()
        .map(|z| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (k, mu) in centroids.iter_rows().enumerate() {
                let v = dot(z, mu);
                if v > best_val {
                    best = k;
                    best_val = v;
                }
            }
            best
        })
        .collect()
}

/// `μₖ = sₖ/‖sₖ‖` with `sₖ` the sum of the rows assigned to `k`.
///
/// A cluster that is empty (or whose members cancel out) is moved to the row
/// whose best cosine to the centroids already placed is lowest.
pub fn update_centroids(unit: &Matrix, labels: &[usize], k: usize) -> Result<Matrix> {
    if labels.len() != unit.rows() {
        return Err(Error::LengthMismatch(labels.len(), unit.rows()));
    }
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    let d = unit.cols();
    let mut sums = Matrix::zeros(k, d);
    for (i, &a) in labels.iter().enumerate() {
        if a >= k {
            return Err(Error::LabelOutOfRange { label: a, k });
        }
        for (s, &z) in sums.row_mut(a).iter_mut().zip(unit.row(i)) {
            *s += z;
        }
    }
    let mut placed = vec![false; k];
    for c in 0..k {
        let n = norm(sums.row(c));
        if n >= NORM_GUARD {
            for v in sums.row_mut(c) {
                *v /= n;
            }
            placed[c] = true;
        }
    }
    if unit.rows() == 0 {
        return Err(Error::Contract("no rows to place centroids on".into()));
    }
    for c in 0..k {
        if placed[c] {
            continue;
        }
        let far = farthest_row(unit, &sums, &placed)?;
        let n = norm(unit.row(far));
        let row: Vec<f64> = unit.row(far).iter().map(|v| v / n).collect();
        sums.row_mut(c).copy_from_slice(&row);
        placed[c] = true;
    }
    Ok(sums)
}

/// Row with the lowest maximum cosine to the placed centroids (first on ties).
fn farthest_row(unit: &Matrix, centroids: &Matrix, placed: &[bool]) -> Result<usize> {
    let mut best = None;
    let mut best_val = f64::INFINITY;
    for (i, z) in unit.iter_rows().enumerate() {
        if norm(z) < NORM_GUARD {
            continue;
        }
        let closest = centroids
            .iter_rows()
            .zip(placed)
            .filter(|(_, &p)| p)
            .map(|(mu, _)| dot(z, mu))
            .fold(f64::NEG_INFINITY, f64::max);
        if closest < best_val {
            best_val = closest;
            best = Some(i);
        }
    }
    best.ok_or_else(|| Error::DegenerateRow { row: 0, norm: 0.0 })
}

/// Spherical k-means++ seeding followed by assignment/centroid alternation
/// until the assignments stop changing.
pub fn init_centroids(unit: &Matrix, k: usize, seed: u64) -> Result<ClusterState> {
    let n = unit.rows();
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Config(format!("{k} clusters requested for {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = unit.cols();
    let mut centroids = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(unit.row(first));
    let mut closest: Vec<f64> = unit.iter_rows().map(|z| dot(z, centroids.row(0))).collect();
    for c in 1..k {
        let dist: Vec<f64> = closest.iter().map(|&s| (1.0 - s).max(0.0)).collect();
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(unit.row(pick));
        for (s, z) in closest.iter_mut().zip(unit.iter_rows()) {
            *s = s.max(dot(z, centroids.row(c)));
        }
    }

    let mut labels = update_assignments(unit, &centroids);
    for _ in 0..MAX_INIT_ITERS {
        centroids = update_centroids(unit, &labels, k)?;
        let next = update_assignments(unit, &centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(ClusterState {
        centroids,
        assignments: labels,
    })
}
