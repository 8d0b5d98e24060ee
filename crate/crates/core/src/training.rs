//! Pre-training and the two alternating clustering stages.
//!
//! Pre-training minimizes `L_d + λ·L_r` batch by batch, rebuilding the raw
//! k-NN graph and its anchor pairs for every batch. Each clustering stage then
//! repeats: embed the whole dataset, reassign points, recompute centroids, and
//! train the network for a few epochs against the stage objective with the
//! assignments and centroids held fixed.

use std::time::Instant;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NORM_GUARD};
use crate::clustering::{init_centroids, objective_value, update_assignments, update_centroids};
use crate::data::{epoch_batches, min_batch_len, Dataset};
use crate::error::{Error, Result};
use crate::eval::{accuracy, nmi};
use crate::knn::{build_knn_graph, extract_anchors};
use crate::linalg::Matrix;
use crate::losses::{
    forward_batch, pretrain_objective, stage1_objective, stage2_objective, ClusterState,
    PairWeights, Stage2Weights, Terms,
};
use crate::model::Autoencoder;
use crate::optim::{Adam, AdamConfig};

/// Batch-shuffle stream offsets, so the three phases never reuse a permutation.
const STAGE1_STREAM: u64 = 1 << 32;
const STAGE2_STREAM: u64 = 2 << 32;

/// All optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Anchor-uncertainty compensation, in (0, 1).
    pub alpha: f64,
    /// Reconstruction weight during pre-training, in (0, 1].
    pub lambda: f64,
    /// Discriminative weight in stage 1 (nominally within [1, 5]).
    pub lambda_d: f64,
    /// When set, `lambda_d` decays linearly to this value over stage 1.
    pub lambda_d_end: Option<f64>,
    /// Reconstruction weight in both clustering stages.
    pub lambda_r: f64,
    pub lambda_b: f64,
    pub lambda_w: f64,
    /// Neighbors per node in the raw-space graph.
    pub knn_k: usize,
    pub anchor_fraction: f64,
    pub batch_size: usize,
    pub clusters: usize,
    /// Maximum pre-training epochs.
    pub pretrain_epochs: usize,
    /// Maximum alternations per clustering stage.
    pub cluster_iterations: usize,
    /// Convergence tolerance on the epoch-mean `L_d` (pre-training) and the
    /// dataset-level `L_c` (clustering stages).
    pub tolerance: f64,
    pub epochs_per_block: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Adds elapsed seconds to metrics records; breaks byte-identical reruns.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.9,
            lambda: 0.001,
            lambda_d: 1.0,
            lambda_d_end: None,
            lambda_r: 0.001,
            lambda_b: 1.0,
            lambda_w: 0.3,
            knn_k: 5,
            anchor_fraction: 0.02,
            batch_size: 1000,
            clusters: 10,
            pretrain_epochs: 50,
            cluster_iterations: 20,
            tolerance: 1e-4,
            epochs_per_block: 4,
            optimizer: AdamConfig::default(),
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda must lie in (0, 1], got {}", self.lambda));
        }
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_r", self.lambda_r),
            ("lambda_b", self.lambda_b),
            ("lambda_w", self.lambda_w),
            ("tolerance", self.tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let Some(end) = self.lambda_d_end {
            if !(end >= 0.0 && end.is_finite()) {
                return bad(format!("lambda_d_end must be non-negative, got {end}"));
            }
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction <= 1.0) {
            return bad(format!(
                "anchor_fraction must lie in (0, 1], got {}",
                self.anchor_fraction
            ));
        }
        for (name, v) in [
            ("knn_k", self.knn_k),
            ("batch_size", self.batch_size),
            ("clusters", self.clusters),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.batch_size <= self.clusters {
            return bad(format!(
                "batch_size {} must exceed the cluster count {}",
                self.batch_size, self.clusters
            ));
        }
        let min = min_batch_len(self.knn_k, self.clusters);
        if self.batch_size < min {
            return bad(format!("batch_size must be at least {min} for knn_k and clusters"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return bad("optimizer settings out of range".into());
        }
        Ok(())
    }

    /// Non-fatal deviations from the recommended ranges.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(1.0..=5.0).contains(&self.lambda_d) {
            out.push(format!("lambda_d = {} lies outside [1, 5]", self.lambda_d));
        }
        if self.knn_k > self.clusters {
            out.push(format!(
                "knn_k = {} exceeds the cluster count {}",
                self.knn_k, self.clusters
            ));
        }
        out
    }

    fn lambda_d_at(&self, iteration: usize) -> f64 {
        match self.lambda_d_end {
            None => self.lambda_d,
            Some(end) => {
                let span = self.cluster_iterations.saturating_sub(1).max(1) as f64;
                let t = (iteration as f64 / span).min(1.0);
                self.lambda_d + (end - self.lambda_d) * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPhase {
    Pretrain,
    Stage1,
    Stage2,
}

/// One line of the metrics stream.
///
/// Pre-training writes one record per epoch. The clustering stages write one
/// record per alternation; `epoch` then counts alternations and the loss
/// fields are means over that alternation's training batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: TrainPhase,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_w: Option<f64>,
    /// Dataset-level clustering objective after the assignment/centroid update.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

impl MetricsRecord {
    fn new(phase: TrainPhase, epoch: usize) -> Self {
        MetricsRecord {
            phase,
            epoch,
            l_d: None,
            l_r: None,
            l_c: None,
            l_b: None,
            l_w: None,
            objective: None,
            acc: None,
            nmi: None,
            wall_time: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub records: Vec<MetricsRecord>,
    pub converged: bool,
    /// Total completed epochs, including any before a resume.
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub state: ClusterState,
    pub records: Vec<MetricsRecord>,
    pub converged: bool,
    pub iterations: usize,
}

/// Receives each metrics record as soon as it is produced.
pub type RecordSink<'a> = dyn FnMut(&MetricsRecord) -> Result<()> + 'a;

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Autoencoder,
    pub optimizer: Adam,
    pub config: TrainConfig,
}

#[derive(Default)]
struct Running {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl Running {
    fn add(&mut self, slot: usize, v: f64) {
        self.sums[slot] += v;
        self.counts[slot] += 1;
    }

    fn mean(&self, slot: usize) -> Option<f64> {
        (self.counts[slot] > 0).then(|| self.sums[slot] / self.counts[slot] as f64)
    }

    fn record(&mut self, g: &Graph, t: &Terms) {
        let slots = [t.discriminative, Some(t.reconstruction), t.clustering, t.between, t.within];
        for (i, v) in slots.into_iter().enumerate() {
            if let Some(v) = v {
                self.add(i, g.scalar(v));
            }
        }
    }

    fn fill(&self, rec: &mut MetricsRecord) {
        rec.l_d = self.mean(0);
        rec.l_r = self.mean(1);
        rec.l_c = self.mean(2);
        rec.l_b = self.mean(3);
        rec.l_w = self.mean(4);
    }
}

impl Trainer {
    pub fn new(model: Autoencoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.optimizer, &model.param_shapes());
        Ok(Trainer {
            model,
            optimizer,
            config,
        })
    }

    /// Continues from saved optimizer moments.
    pub fn with_optimizer(model: Autoencoder, optimizer: Adam, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if optimizer.first.len() != model.param_shapes().len() {
            return Err(Error::SpecMismatch("optimizer state does not fit the model".into()));
        }
        Ok(Trainer {
            model,
            optimizer,
            config,
        })
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.model.input_dim() {
            return Err(Error::SpecMismatch(format!(
                "dataset has {} features, model expects {}",
                data.dim(),
                self.model.input_dim()
            )));
        }
        if data.len() < self.config.batch_size {
            return Err(Error::Config(format!(
                "dataset of {} rows is smaller than batch_size {}",
                data.len(),
                self.config.batch_size
            )));
        }
        for w in self.config.warnings() {
            warn!("{w}");
        }
        Ok(())
    }

    /// Row-normalized embedding of every data point.
    pub fn embed_unit(&self, data: &Dataset) -> Result<Matrix> {
        self.model.embed(&data.features)?.normalize_rows(NORM_GUARD)
    }

    fn step(&mut self, g: &Graph, total: crate::autodiff::Var, vars: &[crate::autodiff::Var], sign: f64) -> Result<()> {
        let value = g.scalar(total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {value}")));
        }
        let grads = g.backward(total)?;
        let grads: Vec<Matrix> = vars
            .iter()
            .map(|&v| {
                let gr = grads.wrt(v);
                if sign == 1.0 { gr } else { gr.scale(sign) }
            })
            .collect();
        let mut params = self.model.params_mut();
        self.optimizer.step(&mut params, &grads)?;
        if !self.model.is_finite() {
            return Err(Error::NonFinite("parameters diverged".into()));
        }
        Ok(())
    }

    fn labelled_scores(&self, data: &Dataset, predicted: &[usize], rec: &mut MetricsRecord) -> Result<()> {
        if let Some(truth) = &data.labels {
            let k = self
                .config
                .clusters
                .max(data.k_hint.unwrap_or(0))
                .max(truth.iter().max().map_or(0, |m| m + 1));
            rec.acc = Some(accuracy(truth, predicted, k)?);
            rec.nmi = Some(nmi(truth, predicted)?);
        }
        Ok(())
    }

    /// Autoencoder pre-training.
    ///
    /// Runs until `pretrain_epochs` epochs have completed in total (counting
    /// `start_epoch` epochs done before a resume) or until the epoch-mean
    /// `L_d` changes by at most `tolerance`.
    pub fn pretrain(
        &mut self,
        data: &Dataset,
        start_epoch: usize,
        sink: &mut RecordSink<'_>,
    ) -> Result<PretrainReport> {
        let cfg = self.config.clone();
        let mut records = Vec::new();
        let mut epoch = start_epoch;
        if epoch >= cfg.pretrain_epochs {
            return Ok(PretrainReport {
                records,
                converged: false,
                epochs: epoch,
            });
        }
        self.check_dataset(data)?;
        let started = Instant::now();
        let min_len = min_batch_len(cfg.knn_k, cfg.clusters);
        let mut previous: Option<f64> = None;
        let mut converged = false;
        while epoch < cfg.pretrain_epochs {
            let mut running = Running::default();
            for idx in epoch_batches(data.len(), cfg.batch_size, cfg.seed, epoch as u64, min_len)? {
                let x = data.features.select_rows(&idx);
                let anchors = extract_anchors(&build_knn_graph(&x, cfg.knn_k)?, cfg.anchor_fraction)?;
                let weights = PairWeights::new(x.rows(), &anchors, cfg.alpha)?;
                let mut g = Graph::new();
                let params = self.model.bind(&mut g);
                let fwd = forward_batch(&mut g, &self.model, &params, &x)?;
                let terms = pretrain_objective(&mut g, &fwd, &weights, cfg.lambda)?;
                running.record(&g, &terms);
                self.step(&g, terms.total, &params.vars, 1.0)?;
            }
            let mut rec = MetricsRecord::new(TrainPhase::Pretrain, epoch);
            running.fill(&mut rec);
            if data.labels.is_some() {
                let unit = self.embed_unit(data)?;
                let state = init_centroids(&unit, cfg.clusters, cfg.seed)?;
                self.labelled_scores(data, &state.assignments, &mut rec)?;
            }
            if cfg.record_wall_time {
                rec.wall_time = Some(started.elapsed().as_secs_f64());
            }
            debug!("pretrain epoch {epoch}: {rec:?}");
            sink(&rec)?;
            epoch += 1;
            let ld = rec.l_d.unwrap_or(0.0);
            records.push(rec);
            if let Some(p) = previous {
                if (ld - p).abs() <= cfg.tolerance {
                    converged = true;
                    break;
                }
            }
            previous = Some(ld);
        }
        Ok(PretrainReport {
            records,
            converged,
            epochs: epoch,
        })
    }

    /// Centroid initialization over the whole dataset.
    pub fn init_clusters(&self, data: &Dataset) -> Result<ClusterState> {
        init_centroids(&self.embed_unit(data)?, self.config.clusters, self.config.seed)
    }

    /// Stage 1: clustering regularized by the anchor-based discriminative and
    /// reconstruction losses.
    pub fn cluster_stage1(
        &mut self,
        data: &Dataset,
        initial: Option<ClusterState>,
        sink: &mut RecordSink<'_>,
    ) -> Result<StageReport> {
        self.run_stage(data, initial, TrainPhase::Stage1, sink)
    }

    /// Stage 2: clustering regularized by the between/within-cluster losses
    /// of the current assignments.
    pub fn cluster_stage2(
        &mut self,
        data: &Dataset,
        initial: ClusterState,
        sink: &mut RecordSink<'_>,
    ) -> Result<StageReport> {
        self.run_stage(data, Some(initial), TrainPhase::Stage2, sink)
    }

    fn run_stage(
        &mut self,
        data: &Dataset,
        initial: Option<ClusterState>,
        phase: TrainPhase,
        sink: &mut RecordSink<'_>,
    ) -> Result<StageReport> {
        let cfg = self.config.clone();
        self.check_dataset(data)?;
        let k = cfg.clusters;
        let started = Instant::now();
        let mut state = match initial {
            Some(s) => {
                if s.k() != k || s.assignments.len() != data.len() {
                    return Err(Error::SpecMismatch(
                        "initial cluster state does not fit the dataset".into(),
                    ));
                }
                s
            }
            None => self.init_clusters(data)?,
        };
        let mut records = Vec::new();
        let mut previous: Option<f64> = None;
        let mut converged = false;
        let mut iterations = 0;
        let min_len = min_batch_len(cfg.knn_k, k);
        let stream = match phase {
            TrainPhase::Stage2 => STAGE2_STREAM,
            _ => STAGE1_STREAM,
        };
        let mut trained_epochs = 0u64;

        for it in 0..cfg.cluster_iterations {
            let unit = self.embed_unit(data)?;
            let labels = update_assignments(&unit, &state.centroids);
            let centroids = update_centroids(&unit, &labels, k)?;
            let lc = objective_value(&unit, &centroids, &labels);
            state = ClusterState {
                centroids,
                assignments: labels,
            };
            let mut rec = MetricsRecord::new(phase, it);
            rec.objective = Some(lc);
            iterations = it + 1;
            if previous.is_some_and(|p| (lc - p).abs() < cfg.tolerance) {
                converged = true;
                self.labelled_scores(data, &state.assignments, &mut rec)?;
                if cfg.record_wall_time {
                    rec.wall_time = Some(started.elapsed().as_secs_f64());
                }
                sink(&rec)?;
                records.push(rec);
                break;
            }
            previous = Some(lc);

            let lambda_d = cfg.lambda_d_at(it);
            let mut running = Running::default();
            for _ in 0..cfg.epochs_per_block {
                let batches = epoch_batches(data.len(), cfg.batch_size, cfg.seed, stream + trained_epochs, min_len)?;
                trained_epochs += 1;
                for idx in batches {
                    let x = data.features.select_rows(&idx);
                    let batch_labels: Vec<usize> = idx.iter().map(|&i| state.assignments[i]).collect();
                    let mut g = Graph::new();
                    let params = self.model.bind(&mut g);
                    let fwd = forward_batch(&mut g, &self.model, &params, &x)?;
                    let terms = match phase {
                        TrainPhase::Stage2 => {
                            let t = stage2_objective(
                                &mut g,
                                &fwd,
                                &state.centroids,
                                &batch_labels,
                                Stage2Weights {
                                    lambda_b: cfg.lambda_b,
                                    lambda_w: cfg.lambda_w,
                                    lambda_r: cfg.lambda_r,
                                },
                            )?;
                            if t.between.is_none() {
                                warn!("batch holds fewer than two clusters; between-cluster term skipped");
                            }
                            t
                        }
                        _ => {
                            let anchors = extract_anchors(&build_knn_graph(&x, cfg.knn_k)?, cfg.anchor_fraction)?;
                            let weights = PairWeights::new(x.rows(), &anchors, cfg.alpha)?;
                            stage1_objective(
                                &mut g,
                                &fwd,
                                &state.centroids,
                                &batch_labels,
                                &weights,
                                lambda_d,
                                cfg.lambda_r,
                            )?
                        }
                    };
                    running.record(&g, &terms);
                    // maximize: descend on the negated objective
                    self.step(&g, terms.total, &params.vars, -1.0)?;
                }
            }
            running.fill(&mut rec);
            if data.labels.is_some() {
                let fresh = update_assignments(&self.embed_unit(data)?, &state.centroids);
                self.labelled_scores(data, &fresh, &mut rec)?;
            }
            if cfg.record_wall_time {
                rec.wall_time = Some(started.elapsed().as_secs_f64());
            }
            debug!("{phase:?} iteration {it}: {rec:?}");
            sink(&rec)?;
            records.push(rec);
        }

        if iterations > 0 {
            let unit = self.embed_unit(data)?;
            state.assignments = update_assignments(&unit, &state.centroids);
        }
        Ok(StageReport {
            state,
            records,
            converged,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_recommended_values() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda, 0.001);
        assert_eq!((c.lambda_b, c.lambda_w), (1.0, 0.3));
        assert_eq!(c.lambda_d, 1.0);
        assert_eq!(c.optimizer.learning_rate, 1e-3);
        assert_eq!((c.optimizer.beta1, c.optimizer.beta2), (0.9, 0.999));
        assert_eq!(c.epochs_per_block, 4);
        c.validate().unwrap();
        assert!(c.warnings().is_empty());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let base = TrainConfig::default();
        for bad in [
            TrainConfig { alpha: 1.0, ..base.clone() },
            TrainConfig { lambda: 0.0, ..base.clone() },
            TrainConfig { lambda: 1.5, ..base.clone() },
            TrainConfig { batch_size: 10, ..base.clone() },
            TrainConfig { knn_k: 0, ..base.clone() },
            TrainConfig { anchor_fraction: 0.0, ..base.clone() },
            TrainConfig { lambda_b: -1.0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        let w = TrainConfig { lambda_d: 7.0, knn_k: 12, batch_size: 100, ..base };
        w.validate().unwrap();
        assert_eq!(w.warnings().len(), 2);
    }

    #[test]
    fn lambda_d_schedule() {
        let c = TrainConfig {
            lambda_d: 4.0,
            lambda_d_end: Some(1.0),
            cluster_iterations: 4,
            ..TrainConfig::default()
        };
        assert_eq!(c.lambda_d_at(0), 4.0);
        assert_eq!(c.lambda_d_at(3), 1.0);
        assert_eq!(c.lambda_d_at(9), 1.0);
        assert_eq!(TrainConfig::default().lambda_d_at(5), 1.0);
    }
}
