//! Central finite-difference check of every loss against the analytic
//! gradients, taken with respect to all model parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::knn::{build_knn_graph, extract_anchors, AnchorSet};
use crate::linalg::Matrix;
use crate::losses::{
    between_cluster_loss, clustering_objective, cross_cluster_means, discriminative_loss,
    forward_batch, pretrain_objective, reconstruction_loss, stage1_objective, stage2_objective,
    within_cluster_loss, PairWeights, Stage2Weights,
};
use crate::model::{Activation, ArchSpec, Autoencoder};

/// Smallest admissible distance from any kink (|C_ij| = 0, ReLU at 0, an
/// `L_b` argmax tie) in a generated setup.
pub const KINK_MARGIN: f64 = 1e-4;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Discriminative,
    Reconstruction,
    Clustering,
    Between,
    Within,
    Pretrain,
    Stage1,
    Stage2,
}

impl LossKind {
    pub const ALL: [LossKind; 8] = [
        LossKind::Discriminative,
        LossKind::Reconstruction,
        LossKind::Clustering,
        LossKind::Between,
        LossKind::Within,
        LossKind::Pretrain,
        LossKind::Stage1,
        LossKind::Stage2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Discriminative => "L_d",
            LossKind::Reconstruction => "L_r",
            LossKind::Clustering => "L_c",
            LossKind::Between => "L_b",
            LossKind::Within => "L_w",
            LossKind::Pretrain => "pretrain",
            LossKind::Stage1 => "stage1",
            LossKind::Stage2 => "stage2",
        }
    }
}

/// A small model, batch, and cluster state away from every non-smooth point.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: Autoencoder,
    pub batch: Matrix,
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub anchors: AnchorSet,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub loss: LossKind,
    /// `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖, 1e-12)` over all parameters.
    pub rel_error: f64,
    /// Largest single-coordinate absolute difference.
    pub max_abs_diff: f64,
    pub parameters: usize,
}

impl Setup {
    /// Draws setups from `seed` until one clears [`KINK_MARGIN`] everywhere.
    pub fn random(seed: u64, batch: usize, input: usize, hidden: usize, latent: usize, k: usize) -> Result<Self> {
        if k < 2 || batch < k || batch < 4 {
            return Err(Error::Config("gradient check needs k ≥ 2 and a batch of at least max(k, 4)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchSpec::symmetric(input, &[hidden], latent);
        for _ in 0..MAX_ATTEMPTS {
            let mut model = Autoencoder::init(arch.clone(), rng.random())?;
            for layer in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
                for b in layer.bias.as_mut_slice() {
                    *b = rng.random_range(-0.1..0.1);
                }
            }
            let data = (0..batch * input).map(|_| rng.random_range(0.0..1.0)).collect();
            let x = Matrix::from_vec(batch, input, data)?;
            let mut labels: Vec<usize> = (0..batch).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
            for i in (1..batch).rev() {
                labels.swap(i, rng.random_range(0..=i));
            }
            let raw: Vec<f64> = (0..k * latent).map(|_| StandardNormal.sample(&mut rng)).collect();
            let centroids = Matrix::from_vec(k, latent, raw)?.normalize_rows(1e-8)?;
            let anchors = extract_anchors(&build_knn_graph(&x, 2)?, 0.25)?;
            let setup = Setup {
                model,
                batch: x,
                labels,
                centroids,
                anchors,
                alpha: 0.9,
            };
            if setup.clear_of_kinks()? {
                return Ok(setup);
            }
        }
        Err(Error::Contract("no smooth gradient-check setup found".into()))
    }

    fn clear_of_kinks(&self) -> Result<bool> {
        let mut h = self.batch.clone();
        for layer in self.model.encoder.iter().chain(&self.model.decoder) {
            let mut pre = h.matmul(&layer.weight)?;
            for r in 0..pre.rows() {
                for (v, b) in pre.row_mut(r).iter_mut().zip(layer.bias.as_slice()) {
                    *v += b;
                }
            }
            if layer.spec.activation == Activation::Relu {
                if pre.as_slice().iter().any(|v| v.abs() < KINK_MARGIN) {
                    return Ok(false);
                }
                pre = pre.map(|v| v.max(0.0));
            }
            h = pre;
        }
        let sims = self.model.embed(&self.batch)?.normalize_rows(1e-8)?.gram();
        for i in 0..sims.rows() {
            for j in 0..sims.cols() {
                if i != j && sims[(i, j)].abs() < KINK_MARGIN {
                    return Ok(false);
                }
            }
        }
        let mut means: Vec<f64> = cross_cluster_means(&sims, &self.labels, self.centroids.rows())?
            .into_iter()
            .map(|(_, m)| m)
            .collect();
        means.sort_by(|a, b| b.total_cmp(a));
        Ok(means.len() < 2 || means[0] - means[1] >= KINK_MARGIN)
    }

    fn build(&self, model: &Autoencoder, g: &mut Graph, kind: LossKind) -> Result<(Var, Vec<Var>)> {
        let params = model.bind(g);
        let fwd = forward_batch(g, model, &params, &self.batch)?;
        let k = self.centroids.rows();
        let weights = || PairWeights::new(self.batch.rows(), &self.anchors, self.alpha);
        let stage2 = Stage2Weights {
            lambda_b: 1.0,
            lambda_w: 0.3,
            lambda_r: 0.3,
        };
        let out = match kind {
            LossKind::Discriminative => discriminative_loss(g, fwd.sims, &weights()?)?,
            LossKind::Reconstruction => reconstruction_loss(g, fwd.input, fwd.reconstruction)?,
            LossKind::Clustering => clustering_objective(g, fwd.unit, &self.centroids, &self.labels)?,
            LossKind::Between => between_cluster_loss(g, fwd.sims, &self.labels, k)?,
            LossKind::Within => within_cluster_loss(g, fwd.sims, &self.labels, k)?,
            LossKind::Pretrain => pretrain_objective(g, &fwd, &weights()?, 0.5)?.total,
            LossKind::Stage1 => {
                stage1_objective(g, &fwd, &self.centroids, &self.labels, &weights()?, 2.0, 0.3)?.total
            }
            LossKind::Stage2 => stage2_objective(g, &fwd, &self.centroids, &self.labels, stage2)?.total,
        };
        Ok((out, params.vars))
    }

    fn value(&self, model: &Autoencoder, kind: LossKind) -> Result<f64> {
        let mut g = Graph::new();
        let (v, _) = self.build(model, &mut g, kind)?;
        Ok(g.scalar(v))
    }

    /// Compares analytic and central-difference gradients for one loss.
    pub fn check(&self, kind: LossKind, step: f64) -> Result<CheckResult> {
        let mut g = Graph::new();
        let (loss, vars) = self.build(&self.model, &mut g, kind)?;
        let grads = g.backward(loss)?;
        let analytic: Vec<f64> = vars.iter().flat_map(|&v| grads.wrt(v).into_vec()).collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        let mut probe = self.model.clone();
        let tensors = probe.params().len();
        for t in 0..tensors {
            let len = probe.params()[t].len();
            for i in 0..len {
                let orig = probe.params()[t].as_slice()[i];
                probe.params_mut()[t].as_mut_slice()[i] = orig + step;
                let up = self.value(&probe, kind)?;
                probe.params_mut()[t].as_mut_slice()[i] = orig - step;
                let down = self.value(&probe, kind)?;
                probe.params_mut()[t].as_mut_slice()[i] = orig;
                numeric.push((up - down) / (2.0 * step));
            }
        }

        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let max_abs_diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok(CheckResult {
            loss: kind,
            rel_error: diff / na.max(nb).max(1e-12),
            max_abs_diff,
            parameters: analytic.len(),
        })
    }

    pub fn check_all(&self, step: f64) -> Result<Vec<CheckResult>> {
        LossKind::ALL.iter().map(|&k| self.check(k, step)).collect()
    }
}

/// The default suite: an 8-point batch through a 6→5→4 autoencoder, three clusters.
pub fn run(seed: u64) -> Result<Vec<CheckResult>> {
    Setup::random(seed, 8, 6, 5, 4, 3)?.check_all(1e-6)
}
