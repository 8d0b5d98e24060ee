//! Clustering accuracy under the best one-to-one label matching, NMI, and
//! within/between pair-count estimates.

use crate::error::{Error, Result};

/// Largest cluster count accepted by [`accuracy`].
pub const MAX_CLUSTERS: usize = 1000;
/// Largest cluster count accepted by [`accuracy_bruteforce`].
pub const MAX_BRUTEFORCE_CLUSTERS: usize = 8;

/// `counts[i][j] = |{n : truth[n] = i, predicted[n] = j}|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(truth: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::LengthMismatch(truth.len(), predicted.len()));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            for label in [t, p] {
                if label >= k {
                    return Err(Error::LabelOutOfRange { label, k });
                }
            }
            counts[t][p] += 1;
        }
        Ok(ContingencyTable {
            k,
            counts,
            total: truth.len() as u64,
        })
    }

    fn matched(&self, mapping: &[usize]) -> u64 {
        mapping
            .iter()
            .enumerate()
            .map(|(t, &p)| self.counts[t][p])
            .sum()
    }
}

/// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
/// paths with row/column potentials, O(n³)). Returns `assign[row] = col`.
pub fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual root column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    assign
}

/// Best bijection truth → predicted for a contingency table.
pub fn best_mapping(table: &ContingencyTable) -> Vec<usize> {
    let cost: Vec<Vec<i64>> = table
        .counts
        .iter()
        .map(|row| row.iter().map(|&c| -(c as i64)).collect())
        .collect();
    hungarian_min(&cost)
}

/// Fraction of points whose predicted cluster maps to their true class under
/// the best one-to-one matching.
pub fn accuracy(truth: &[usize], predicted: &[usize], k: usize) -> Result<f64> {
    if k > MAX_CLUSTERS {
        return Err(Error::TooLarge(format!(
            "accuracy supports at most {MAX_CLUSTERS} clusters, got {k}"
        )));
    }
    let table = ContingencyTable::new(truth, predicted, k)?;
    if table.total == 0 {
        return Err(Error::Contract("accuracy of an empty labeling".into()));
    }
    let mapping = best_mapping(&table);
    Ok(table.matched(&mapping) as f64 / table.total as f64)
}

/// [`accuracy`] by exhaustive search over all `k!` bijections.
pub fn accuracy_bruteforce(truth: &[usize], predicted: &[usize], k: usize) -> Result<f64> {
    if k > MAX_BRUTEFORCE_CLUSTERS {
        return Err(Error::TooLarge(format!(
            "brute-force accuracy supports at most {MAX_BRUTEFORCE_CLUSTERS} clusters, got {k}"
        )));
    }
    let table = ContingencyTable::new(truth, predicted, k)?;
    if table.total == 0 {
        return Err(Error::Contract("accuracy of an empty labeling".into()));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = table.matched(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let mut i = 1;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.max(table.matched(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best as f64 / table.total as f64)
}

fn entropy(counts: impl Iterator<Item = u64>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies.
///
/// Two single-cluster labelings score 1.
pub fn nmi(truth: &[usize], predicted: &[usize]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::Contract("nmi of an empty labeling".into()));
    }
    let k = truth.iter().chain(predicted).max().map_or(0, |&m| m + 1);
    let table = ContingencyTable::new(truth, predicted, k)?;
    let n = table.total as f64;
    let rows: Vec<u64> = table.counts.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..k).map(|j| table.counts.iter().map(|r| r[j]).sum()).collect();
    let hu = entropy(rows.iter().copied(), n);
    let hv = entropy(cols.iter().copied(), n);
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij * n * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    let denom = 0.5 * (hu + hv);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Within- and between-cluster pair counts for a dataset of `n` points in `k`
/// balanced clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCounts {
    /// `k · C(n/k, 2)`, with `n/k` taken as a real number.
    pub within_estimate: f64,
    /// `½ n² (1 − 1/k)`. When `k` divides `n` this equals the exact
    /// unordered between count.
    pub between_estimate: f64,
    /// `C(n, 2)`.
    pub total_pairs: u128,
    /// Exact unordered counts, present when `k` divides `n`.
    pub exact_within: Option<u128>,
    pub exact_between: Option<u128>,
}

pub fn pair_counts(n: u64, k: u64) -> Result<PairCounts> {
    if k == 0 || n < k {
        return Err(Error::Config(format!("pair counts need n >= k >= 1, got n={n}, k={k}")));
    }
    let (n128, k128) = (n as u128, k as u128);
    let m = n as f64 / k as f64;
    let within_estimate = k as f64 * (m * (m - 1.0) / 2.0);
    // n²(k−1)/(2k) in integers first so round values stay exact
    let num = n128 * n128 * (k128 - 1);
    let den = 2 * k128;
    let between_estimate = if num % den == 0 {
        (num / den) as f64
    } else {
        num as f64 / den as f64
    };
    let total_pairs = n128 * (n128 - 1) / 2;
    let (exact_within, exact_between) = if n % k == 0 {
        let per = n128 / k128;
        let w = k128 * (per * (per - 1) / 2);
        (Some(w), Some(total_pairs - w))
    } else {
        (None, None)
    };
    Ok(PairCounts {
        within_estimate,
        between_estimate,
        total_pairs,
        exact_within,
        exact_between,
    })
}
