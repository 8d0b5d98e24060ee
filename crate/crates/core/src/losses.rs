//! Pairwise discriminative, reconstruction and clustering objectives.
//!
//! Pairwise terms work on the batch cosine-similarity matrix `C = Z̃Z̃ᵀ`
//! (rows of `Z̃` are unit-norm latents). Pairs are ordered: `(i, j)` and
//! `(j, i)` are both counted, and the diagonal, which is constant, is left
//! out of the discriminative terms.

use crate::autodiff::{Graph, SumMode, Var};
use crate::error::{Error, Result};
use crate::knn::AnchorSet;
use crate::linalg::Matrix;
use crate::model::{Autoencoder, BoundParams};

/// Per-pair weights for the discriminative loss over one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    /// `−(1−α)/|A|` on anchor entries, `1/(|B|²−|A|)` elsewhere off the
    /// diagonal, zero on the diagonal. `|A|` counts ordered anchor entries.
    pub weights: Matrix,
    pub is_anchor: Vec<bool>,
    pub alpha: f64,
    pub ordered_anchors: usize,
}

impl PairWeights {
    pub fn new(batch: usize, anchors: &AnchorSet, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let mut is_anchor = vec![false; batch * batch];
        for &(i, j) in &anchors.pairs {
            if i >= batch || j >= batch || i == j {
                return Err(Error::Contract(format!(
                    "anchor ({i}, {j}) invalid for a batch of {batch}"
                )));
            }
            is_anchor[i * batch + j] = true;
            is_anchor[j * batch + i] = true;
        }
        let ordered = is_anchor.iter().filter(|&&a| a).count();
        let n2 = (batch * batch) as f64;
        let repel = 1.0 / (n2 - ordered as f64);
        let attract = if ordered > 0 {
            -(1.0 - alpha) / ordered as f64
        } else {
            0.0
        };
        let mut weights = Matrix::zeros(batch, batch);
        for i in 0..batch {
            for j in 0..batch {
                if i != j {
                    weights[(i, j)] = if is_anchor[i * batch + j] { attract } else { repel };
                }
            }
        }
        Ok(PairWeights {
            weights,
            is_anchor,
            alpha,
            ordered_anchors: ordered,
        })
    }

    /// Splits into (absolute-mode non-anchor weights, signed-mode anchor weights).
    fn split(&self) -> (Matrix, Matrix) {
        let mut repel = self.weights.clone();
        let mut attract = Matrix::zeros(self.weights.rows(), self.weights.cols());
        for (idx, &a) in self.is_anchor.iter().enumerate() {
            if a {
                attract.as_mut_slice()[idx] = repel.as_slice()[idx];
                repel.as_mut_slice()[idx] = 0.0;
            }
        }
        (repel, attract)
    }
}

/// Unit-norm centroids and a hard assignment per point.
///
/// The assignment matrix `S` is stored as one cluster index per row;
/// [`ClusterState::indicator`] expands it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// K × d, unit rows.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
}

impl ClusterState {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn validate(&self) -> Result<()> {
        for (c, n) in self.centroids.row_norms().into_iter().enumerate() {
            if (n - 1.0).abs() > 1e-10 {
                return Err(Error::Contract(format!("centroid {c} has norm {n}")));
            }
        }
        let k = self.k();
        if let Some(&label) = self.assignments.iter().find(|&&a| a >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        Ok(())
    }

    /// The 0/1 matrix `S` with exactly one 1 per row.
    pub fn indicator(&self) -> Matrix {
        let mut s = Matrix::zeros(self.assignments.len(), self.k());
        for (i, &a) in self.assignments.iter().enumerate() {
            s[(i, a)] = 1.0;
        }
        s
    }
}

/// Graph nodes for one batch pushed through the autoencoder.
#[derive(Debug, Clone, Copy)]
pub struct BatchForward {
    pub input: Var,
    pub latent: Var,
    /// Row-normalized latent `Z̃`.
    pub unit: Var,
    /// `C = Z̃Z̃ᵀ`.
    pub sims: Var,
    pub reconstruction: Var,
}

pub fn forward_batch(
    g: &mut Graph,
    model: &Autoencoder,
    params: &BoundParams,
    x: &Matrix,
) -> Result<BatchForward> {
    let input = g.constant(x.clone());
    let latent = model.encode(g, params, input)?;
    let unit = g.row_normalize(latent)?;
    let sims = g.gram(unit);
    let reconstruction = model.decode(g, params, latent)?;
    Ok(BatchForward {
        input,
        latent,
        unit,
        sims,
        reconstruction,
    })
}

/// `L_d = Σ_{non-anchor} |C_ij|/(|B|²−|A|) − (1−α)/|A| · Σ_{anchor} C_ij`.
pub fn discriminative_loss(g: &mut Graph, sims: Var, weights: &PairWeights) -> Result<Var> {
    let (repel, attract) = weights.split();
    let repel_term = g.weighted_sum(sims, repel, SumMode::Absolute)?;
    if weights.ordered_anchors == 0 {
        return Ok(repel_term);
    }
    let attract_term = g.weighted_sum(sims, attract, SumMode::Signed)?;
    g.add(repel_term, attract_term)
}

/// Label-aware reference loss: mean absolute between-cluster similarity minus
/// mean within-cluster similarity, over ordered off-diagonal pairs.
///
/// A side with no pairs contributes zero. Used for diagnostics and tests only.
pub fn oracle_discriminative_loss(g: &mut Graph, sims: Var, labels: &[usize]) -> Result<Var> {
    let n = g.value(sims).rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let mut between = Matrix::zeros(n, n);
    let mut within = Matrix::zeros(n, n);
    let (mut nb, mut nw) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                within[(i, j)] = 1.0;
                nw += 1;
            } else {
                between[(i, j)] = 1.0;
                nb += 1;
            }
        }
    }
    if nb > 0 {
        between = between.scale(1.0 / nb as f64);
    }
    if nw > 0 {
        within = within.scale(-1.0 / nw as f64);
    }
    let b = g.weighted_sum(sims, between, SumMode::Absolute)?;
    let w = g.weighted_sum(sims, within, SumMode::Signed)?;
    g.add(b, w)
}

/// `‖X − X̂‖²_F / |B|`.
pub fn reconstruction_loss(g: &mut Graph, input: Var, reconstruction: Var) -> Result<Var> {
    let n = g.value(input).rows().max(1);
    let sq = g.frobenius_sq(reconstruction, input)?;
    Ok(g.scale(sq, 1.0 / n as f64))
}

/// `L_c = Σᵢ μ_{s(i)}ᵀ z̃ᵢ` for the batch assignment `labels`.
pub fn clustering_objective(
    g: &mut Graph,
    unit: Var,
    centroids: &Matrix,
    labels: &[usize],
) -> Result<Var> {
    let (n, d) = g.value(unit).shape();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    if centroids.cols() != d {
        return Err(Error::dim(
            "clustering_objective",
            format!("centroids have dim {}, latent has {d}", centroids.cols()),
        ));
    }
    let k = centroids.rows();
    let mut targets = Matrix::zeros(n, d);
    for (i, &a) in labels.iter().enumerate() {
        if a >= k {
            return Err(Error::LabelOutOfRange { label: a, k });
        }
        targets.row_mut(i).copy_from_slice(centroids.row(a));
    }
    g.weighted_sum(unit, targets, SumMode::Signed)
}

fn members(labels: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &a) in labels.iter().enumerate() {
        if a >= k {
            return Err(Error::LabelOutOfRange { label: a, k });
        }
        groups[a].push(i);
    }
    Ok(groups)
}

/// Mean `|C_ij|` across clusters `k` and `ℓ` for every pair of non-empty
/// clusters, in lexicographic `(k, ℓ)` order with `k < ℓ`.
pub fn cross_cluster_means(sims: &Matrix, labels: &[usize], k: usize) -> Result<Vec<((usize, usize), f64)>> {
    let groups = members(labels, k)?;
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let (ga, gb) = (&groups[a], &groups[b]);
            if ga.is_empty() || gb.is_empty() {
                continue;
            }
            let s: f64 = ga
                .iter()
                .flat_map(|&i| gb.iter().map(move |&j| sims[(i, j)].abs()))
                .sum();
            out.push(((a, b), s / (ga.len() * gb.len()) as f64));
        }
    }
    Ok(out)
}

/// `L_b`: the largest mean absolute similarity between two clusters.
///
/// The gradient flows through the maximizing pair only; ties go to the
/// lexicographically first pair. Needs two non-empty clusters in the batch.
pub fn between_cluster_loss(g: &mut Graph, sims: Var, labels: &[usize], k: usize) -> Result<Var> {
    let n = g.value(sims).rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let means = cross_cluster_means(g.value(sims), labels, k)?;
    let mut best: Option<((usize, usize), f64)> = None;
    for (pair, m) in means {
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((pair, m));
        }
    }
    let Some(((a, b), _)) = best else {
        return Err(Error::UndefinedLoss(
            "between-cluster loss needs at least two non-empty clusters".into(),
        ));
    };
    let groups = members(labels, k)?;
    let w = 1.0 / (groups[a].len() * groups[b].len()) as f64;
    let mut weights = Matrix::zeros(n, n);
    for &i in &groups[a] {
        for &j in &groups[b] {
            weights[(i, j)] = w;
        }
    }
    g.weighted_sum(sims, weights, SumMode::Absolute)
}

/// `L_w = Σₖ |Cₖ|⁻² Σ_{i,j∈Cₖ} C_ij`, diagonal included; empty clusters add 0.
pub fn within_cluster_loss(g: &mut Graph, sims: Var, labels: &[usize], k: usize) -> Result<Var> {
    let n = g.value(sims).rows();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let groups = members(labels, k)?;
    let mut weights = Matrix::zeros(n, n);
    for group in groups.iter().filter(|m| !m.is_empty()) {
        let w = 1.0 / (group.len() * group.len()) as f64;
        for &i in group {
            for &j in group {
                weights[(i, j)] = w;
            }
        }
    }
    g.weighted_sum(sims, weights, SumMode::Signed)
}

/// Scalar nodes making up a composite objective, for logging.
#[derive(Debug, Clone, Copy)]
pub struct Terms {
    pub total: Var,
    pub discriminative: Option<Var>,
    pub reconstruction: Var,
    pub clustering: Option<Var>,
    pub between: Option<Var>,
    pub within: Option<Var>,
}

/// `L_d + λ·L_r`, to be minimized.
pub fn pretrain_objective(
    g: &mut Graph,
    fwd: &BatchForward,
    weights: &PairWeights,
    lambda: f64,
) -> Result<Terms> {
    let ld = discriminative_loss(g, fwd.sims, weights)?;
    let lr = reconstruction_loss(g, fwd.input, fwd.reconstruction)?;
    let total = g.combine(ld, 1.0, lr, lambda)?;
    Ok(Terms {
        total,
        discriminative: Some(ld),
        reconstruction: lr,
        clustering: None,
        between: None,
        within: None,
    })
}

/// `L_c − λ_d·L_d − λ_r·L_r`, to be maximized.
pub fn stage1_objective(
    g: &mut Graph,
    fwd: &BatchForward,
    centroids: &Matrix,
    labels: &[usize],
    weights: &PairWeights,
    lambda_d: f64,
    lambda_r: f64,
) -> Result<Terms> {
    let lc = clustering_objective(g, fwd.unit, centroids, labels)?;
    let ld = discriminative_loss(g, fwd.sims, weights)?;
    let lr = reconstruction_loss(g, fwd.input, fwd.reconstruction)?;
    let partial = g.combine(lc, 1.0, ld, -lambda_d)?;
    let total = g.combine(partial, 1.0, lr, -lambda_r)?;
    Ok(Terms {
        total,
        discriminative: Some(ld),
        reconstruction: lr,
        clustering: Some(lc),
        between: None,
        within: None,
    })
}

/// Coefficients of the second clustering stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Weights {
    pub lambda_b: f64,
    pub lambda_w: f64,
    pub lambda_r: f64,
}

/// `L_c + λ_w·L_w − λ_b·L_b − λ_r·L_r`, to be maximized.
///
/// When the batch holds fewer than two non-empty clusters the `L_b` term is
/// dropped and `between` is `None`.
pub fn stage2_objective(
    g: &mut Graph,
    fwd: &BatchForward,
    centroids: &Matrix,
    labels: &[usize],
    w: Stage2Weights,
) -> Result<Terms> {
    let k = centroids.rows();
    let lc = clustering_objective(g, fwd.unit, centroids, labels)?;
    let lw = within_cluster_loss(g, fwd.sims, labels, k)?;
    let lb = match between_cluster_loss(g, fwd.sims, labels, k) {
        Ok(v) => Some(v),
        Err(Error::UndefinedLoss(_)) => None,
        Err(e) => return Err(e),
    };
    let lr = reconstruction_loss(g, fwd.input, fwd.reconstruction)?;
    let mut total = g.combine(lc, 1.0, lw, w.lambda_w)?;
    if let Some(lb) = lb {
        total = g.combine(total, 1.0, lb, -w.lambda_b)?;
    }
    total = g.combine(total, 1.0, lr, -w.lambda_r)?;
    Ok(Terms {
        total,
        discriminative: None,
        reconstruction: lr,
        clustering: Some(lc),
        between: lb,
        within: Some(lw),
    })
}
