//! One function per subcommand. Each reads its inputs, does the work through
//! `dclust-core`, and writes its artifacts; `main` only parses flags.

use std::fs;
use std::path::{Path, PathBuf};

use dclust_core::data::{load_labels, make_blobs, BlobSpec};
use dclust_core::eval::{accuracy, nmi};
use dclust_core::gradcheck::{self, CheckResult};
use dclust_core::model::{Autoencoder, Checkpoint, Phase};
use dclust_core::projection::pca_2d;
use dclust_core::training::Trainer;
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{numbered, write_column, write_matrix_csv, MetricsWriter};

pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const PRETRAINED_CKPT: &str = "pretrained.ckpt";
pub const CLUSTERED_CKPT: &str = "clustered.ckpt";
pub const PRETRAIN_METRICS: &str = "pretrain_metrics.jsonl";
pub const CLUSTER_METRICS: &str = "cluster_metrics.jsonl";
pub const ASSIGNMENTS_FILE: &str = "assignments.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const PROJECTION_FILE: &str = "projection.csv";

/// Writes a blob dataset as `features.csv` and `labels.csv` under `out`.
pub fn generate(spec: &BlobSpec, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let ds = make_blobs(spec)?;
    fs::create_dir_all(out)?;
    let features = out.join(FEATURES_FILE);
    let labels = out.join(LABELS_FILE);
    write_matrix_csv(&features, &numbered("x", ds.dim()), &ds.features, None)?;
    write_column(&labels, "label", ds.labels.as_deref().unwrap_or_default())?;
    info!("wrote {} rows to {}", ds.len(), out.display());
    Ok((features, labels))
}

fn prepare_output(config: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&config.output_dir)?;
    fs::write(config.output_dir.join(CONFIG_ECHO), config.to_toml()?)?;
    Ok(())
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    config
        .checkpoint
        .clone()
        .unwrap_or_else(|| config.output_dir.join(PRETRAINED_CKPT))
}

fn trainer_from(ckpt: Checkpoint, config: &RunConfig) -> CliResult<Trainer> {
    let Checkpoint { model, optimizer, .. } = ckpt;
    Ok(match optimizer {
        Some(opt) => Trainer::with_optimizer(model, opt, config.train.clone())?,
        None => Trainer::new(model, config.train.clone())?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub converged: bool,
    pub final_l_d: Option<f64>,
    pub acc: Option<f64>,
}

/// Pre-trains from scratch, or continues from `config.checkpoint` when `resume`.
pub fn pretrain(config: &RunConfig, resume: bool) -> CliResult<PretrainSummary> {
    let data = config.data.load()?;
    prepare_output(config)?;
    let (mut trainer, start) = if resume {
        let path = config
            .checkpoint
            .clone()
            .ok_or_else(|| CliError::Usage("resuming needs `checkpoint` set".into()))?;
        let ckpt = Checkpoint::load_for_input(&path, data.dim())?;
        let epoch = ckpt.manifest.epoch;
        (trainer_from(ckpt, config)?, epoch)
    } else {
        let model = Autoencoder::init(config.model.arch(data.dim()), config.model.seed)?;
        (Trainer::new(model, config.train.clone())?, 0)
    };
    let metrics_path = config.output_dir.join(PRETRAIN_METRICS);
    let mut metrics = MetricsWriter::create(&metrics_path, resume)?;
    info!("pre-training on {} rows of {} features from epoch {start}", data.len(), data.dim());
    let report = trainer.pretrain(&data, start, &mut |r| metrics.write(r))?;
    let checkpoint = config.output_dir.join(PRETRAINED_CKPT);
    Checkpoint::new(
        trainer.model.clone(),
        Phase::Pretrained,
        report.epochs,
        Some(trainer.optimizer.clone()),
    )
    .save(&checkpoint)?;
    let last = report.records.last();
    Ok(PretrainSummary {
        checkpoint,
        epochs: report.epochs,
        converged: report.converged,
        final_l_d: last.and_then(|r| r.l_d),
        acc: last.and_then(|r| r.acc),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub checkpoint: PathBuf,
    pub assignments: PathBuf,
    pub phase: Phase,
    pub stage1_iterations: usize,
    pub stage2_iterations: Option<usize>,
    pub stage1_acc: Option<f64>,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
}

/// Stage 1 then, unless skipped, stage 2, starting from a pre-trained checkpoint.
pub fn cluster(config: &RunConfig, skip_stage2: bool) -> CliResult<ClusterSummary> {
    let data = config.data.load()?;
    let ckpt = Checkpoint::load_for_input(checkpoint_path(config), data.dim())?;
    prepare_output(config)?;
    let mut trainer = trainer_from(ckpt, config)?;
    let mut metrics = MetricsWriter::create(&config.output_dir.join(CLUSTER_METRICS), false)?;
    let mut sink = |r: &_| metrics.write(r);

    let s1 = trainer.cluster_stage1(&data, None, &mut sink)?;
    let score = |labels: &[usize]| -> CliResult<Option<(f64, f64)>> {
        let Some(truth) = &data.labels else { return Ok(None) };
        let k = config.train.clusters.max(data.k_hint.unwrap_or(0));
        Ok(Some((accuracy(truth, labels, k)?, nmi(truth, labels)?)))
    };
    let stage1_acc = score(&s1.state.assignments)?.map(|s| s.0);
    let stage1_iterations = s1.iterations;
    let (state, phase, stage2_iterations, epochs) = if skip_stage2 {
        (s1.state, Phase::Stage1, None, s1.iterations)
    } else {
        let s2 = trainer.cluster_stage2(&data, s1.state, &mut sink)?;
        (s2.state, Phase::Stage2, Some(s2.iterations), s2.iterations)
    };

    let checkpoint = config.output_dir.join(CLUSTERED_CKPT);
    Checkpoint::new(trainer.model.clone(), phase, epochs, Some(trainer.optimizer.clone())).save(&checkpoint)?;
    let assignments = config.output_dir.join(ASSIGNMENTS_FILE);
    write_column(&assignments, "cluster", &state.assignments)?;
    write_matrix_csv(
        &config.output_dir.join(CENTROIDS_FILE),
        &numbered("c", state.centroids.cols()),
        &state.centroids,
        None,
    )?;
    let scores = score(&state.assignments)?;
    Ok(ClusterSummary {
        checkpoint,
        assignments,
        phase,
        stage1_iterations,
        stage2_iterations,
        stage1_acc,
        acc: scores.map(|s| s.0),
        nmi: scores.map(|s| s.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub k: usize,
    pub acc: f64,
    pub nmi: f64,
}

/// ACC and NMI of an assignment file against a label file.
pub fn evaluate(assignments: &Path, labels: &Path, k: Option<usize>) -> CliResult<EvalReport> {
    let pred = load_labels(assignments)?;
    let truth = load_labels(labels)?;
    if pred.len() != truth.len() {
        return Err(dclust_core::Error::LengthMismatch(pred.len(), truth.len()).into());
    }
    if pred.is_empty() {
        return Err(CliError::Data("no assignments to evaluate".into()));
    }
    let seen = pred.iter().chain(&truth).max().map_or(1, |m| m + 1);
    let k = k.unwrap_or(seen);
    Ok(EvalReport {
        n: pred.len(),
        k,
        acc: accuracy(&truth, &pred, k)?,
        nmi: nmi(&truth, &pred)?,
    })
}

/// Latent matrix plus its 2D PCA projection, each with a label column when known.
pub fn export_embedding(config: &RunConfig, out: Option<&Path>) -> CliResult<(PathBuf, PathBuf)> {
    let data = config.data.load()?;
    let ckpt = Checkpoint::load_for_input(checkpoint_path(config), data.dim())?;
    let dir = out.map_or_else(|| config.output_dir.clone(), Path::to_path_buf);
    fs::create_dir_all(&dir)?;
    let z = ckpt.model.embed(&data.features)?;
    let proj = pca_2d(&z)?;
    let labels = data.labels.as_deref();
    let emb_path = dir.join(EMBEDDING_FILE);
    let proj_path = dir.join(PROJECTION_FILE);
    write_matrix_csv(&emb_path, &numbered("z", z.cols()), &z, labels)?;
    write_matrix_csv(&proj_path, &["pc1".to_string(), "pc2".to_string()], &proj, labels)?;
    Ok((emb_path, proj_path))
}

/// Runs the finite-difference suite; `Ok(false)` when a loss exceeds `tolerance`.
pub fn gradcheck(seed: u64, tolerance: f64) -> CliResult<(Vec<CheckResult>, bool)> {
    if !(tolerance > 0.0) {
        return Err(CliError::Usage("tolerance must be positive".into()));
    }
    let results = gradcheck::run(seed)?;
    let ok = results.iter().all(|r| r.rel_error <= tolerance);
    Ok((results, ok))
}
