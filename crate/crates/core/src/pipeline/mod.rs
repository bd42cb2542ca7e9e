//! The progressive-learning loop: normalize, cluster, select, train,
//! evaluate, repeat.

mod config;
mod synthetic;
mod trainer;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::camera_norm::camera_normalize;
use crate::clustering::{dbscan, k_heuristic, kmeans, ClusterAssignment, ClusterError, DbscanParams};
use crate::csv_io::CsvError;
use crate::distance::{pairwise_distances, DistanceError, Metric};
use crate::features::{FeatureError, FeatureSet};
use crate::metrics::{evaluate, EvalResult, MetricsError};
use crate::sampler::{pk_epoch, PkConfig};
use crate::selection::{select_clusters, PseudoLabelDataset, SelectionError, SelectionRules};

pub use config::{parse_loop_config, parse_synthetic_spec, LoopFile};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticError, SyntheticSpec};
pub use trainer::{
    mock_train, ExternalTrainer, MockTrainer, TrainInput, TrainOutput, Trainer, MANIFEST_PLACEHOLDER,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("no cluster survived selection at iteration {iteration}")]
    EmptySelection { iteration: usize },
    #[error("trainer failed at iteration {iteration}: {reason}")]
    TrainerFailure { iteration: usize, reason: String },
    #[error("sample id {0:?} appears in both the training and the evaluation sets")]
    OverlappingIds(String),
    #[error("{0} features carry no ground-truth person ids")]
    MissingGroundTruth(&'static str),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    /// `floor(N / 15)` of the training set.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterMethod {
    Dbscan(DbscanParams),
    Kmeans(KChoice),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainerKind {
    Mock { alpha: f64 },
    /// Shell command template; see [`ExternalTrainer`].
    External { command: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub clustering: ClusterMethod,
    /// Per-iteration ε overrides for DBSCAN (1-based iteration).
    pub eps_overrides: BTreeMap<usize, f64>,
    pub rules: SelectionRules,
    pub pk: PkConfig,
    pub use_camera_norm: bool,
    pub max_iterations: usize,
    /// Iterations without an mAP gain above `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub trainer: TrainerKind,
    pub seed: u64,
    pub eval_metric: Metric,
    pub max_rank: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            clustering: ClusterMethod::Dbscan(DbscanParams::default()),
            eps_overrides: BTreeMap::new(),
            rules: SelectionRules::default(),
            pk: PkConfig::default(),
            use_camera_norm: true,
            max_iterations: 15,
            patience: 3,
            min_delta: 1e-3,
            trainer: TrainerKind::Mock { alpha: 0.5 },
            seed: 0,
            eval_metric: Metric::Euclidean,
            max_rank: 10,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return bad("min_delta must be >= 0".into());
        }
        if self.max_rank == 0 {
            return bad("max_rank must be >= 1".into());
        }
        if self.eval_metric == Metric::Reranked {
            return bad("eval_metric must be euclidean or cosine".into());
        }
        match &self.clustering {
            ClusterMethod::Dbscan(p) => {
                p.validate()?;
                for (&it, &eps) in &self.eps_overrides {
                    DbscanParams { eps, ..*p }.validate()?;
                    if it == 0 {
                        return bad("eps overrides are 1-based".into());
                    }
                }
            }
            ClusterMethod::Kmeans(KChoice::Fixed(0)) => return bad("k must be >= 1".into()),
            ClusterMethod::Kmeans(_) => {}
        }
        self.rules.validate()?;
        self.pk
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let TrainerKind::Mock { alpha } = self.trainer {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return bad(format!("mock alpha must lie in (0, 1], got {alpha}"));
            }
        }
        if self.rules.min_size != self.pk.k {
            log::warn!(
                "selection min_size={} differs from PK k={}; identities smaller than k cannot be sampled",
                self.rules.min_size,
                self.pk.k
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_clusters_raw: usize,
    pub n_clusters_selected: usize,
    pub portion_selected: f64,
    /// Mean majority-person share of the selected clusters, when the
    /// training set carries ground truth.
    pub selected_purity: Option<f64>,
    pub eval: EvalResult,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    Patience,
    /// Selection came back empty at this iteration; no record was emitted for it.
    EmptySelection { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub records: Vec<IterationRecord>,
    /// Index into `records` of the best-mAP iteration.
    pub best: usize,
    pub stop: StopReason,
}

impl LoopOutcome {
    pub fn best_record(&self) -> &IterationRecord {
        &self.records[self.best]
    }
}

/// Mean over pseudo identities of the fraction held by their majority person.
pub fn selected_purity(train: &FeatureSet, ds: &PseudoLabelDataset) -> Option<f64> {
    let persons = train.persons()?;
    let mut counts: Vec<BTreeMap<i64, usize>> = vec![BTreeMap::new(); ds.n_identities];
    for (s, &pid) in ds.samples.iter().zip(&ds.pseudo_ids) {
        *counts[pid].entry(persons[s.index]).or_default() += 1;
    }
    let total: f64 = counts
        .iter()
        .map(|c| {
            let size: usize = c.values().sum();
            *c.values().max().unwrap() as f64 / size as f64
        })
        .sum();
    Some(total / ds.n_identities as f64)
}

/// Clusters the training features for one iteration.
pub fn cluster_step(
    train: &FeatureSet,
    cfg: &LoopConfig,
    iteration: usize,
) -> Result<ClusterAssignment, PipelineError> {
    let input = if cfg.use_camera_norm {
        camera_normalize(train)
    } else {
        train.clone()
    };
    Ok(match &cfg.clustering {
        ClusterMethod::Dbscan(p) => {
            let eps = cfg.eps_overrides.get(&iteration).copied().unwrap_or(p.eps);
            dbscan(&input, &DbscanParams { eps, ..*p })?
        }
        ClusterMethod::Kmeans(choice) => {
            let k = match choice {
                KChoice::Auto => k_heuristic(input.len())?,
                KChoice::Fixed(k) => *k,
            };
            kmeans(&input, k, cfg.seed.wrapping_add(iteration as u64))?
        }
    })
}

pub fn evaluate_sets(
    query: &FeatureSet,
    gallery: &FeatureSet,
    metric: Metric,
    max_rank: usize,
) -> Result<EvalResult, PipelineError> {
    let qp = query.persons().ok_or(PipelineError::MissingGroundTruth("query"))?;
    let gp = gallery
        .persons()
        .ok_or(PipelineError::MissingGroundTruth("gallery"))?;
    let dist = pairwise_distances(query, gallery, metric)?;
    Ok(evaluate(&dist, qp, query.cameras(), gp, gallery.cameras(), max_rank)?)
}

fn check_disjoint(train: &FeatureSet, query: &FeatureSet, gallery: &FeatureSet) -> Result<(), PipelineError> {
    let held_out: HashSet<&str> = query
        .ids()
        .iter()
        .chain(gallery.ids())
        .map(String::as_str)
        .collect();
    match train.ids().iter().find(|id| held_out.contains(id.as_str())) {
        Some(id) => Err(PipelineError::OverlappingIds(id.clone())),
        None => Ok(()),
    }
}

/// Runs the loop with the trainer named in `cfg`. External trainers write
/// their per-iteration files under `workdir`.
pub fn run_loop(
    train: &FeatureSet,
    query: &FeatureSet,
    gallery: &FeatureSet,
    cfg: &LoopConfig,
    workdir: Option<&Path>,
) -> Result<LoopOutcome, PipelineError> {
    let mut trainer: Box<dyn Trainer> = match &cfg.trainer {
        TrainerKind::Mock { alpha } => Box::new(MockTrainer { alpha: *alpha }),
        TrainerKind::External { command } => Box::new(ExternalTrainer {
            command: command.clone(),
            workdir: workdir
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        }),
    };
    run_loop_with(train, query, gallery, cfg, trainer.as_mut())
}

pub fn run_loop_with(
    train: &FeatureSet,
    query: &FeatureSet,
    gallery: &FeatureSet,
    cfg: &LoopConfig,
    trainer: &mut dyn Trainer,
) -> Result<LoopOutcome, PipelineError> {
    cfg.validate()?;
    check_disjoint(train, query, gallery)?;
    if query.persons().is_none() {
        return Err(PipelineError::MissingGroundTruth("query"));
    }
    if gallery.persons().is_none() {
        return Err(PipelineError::MissingGroundTruth("gallery"));
    }
    let mut train = train.clone();
    let mut query = query.clone();
    let mut gallery = gallery.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut best = 0usize;
    let mut since_best = 0usize;
    let mut stop = StopReason::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        let started = Instant::now();
        let ca = cluster_step(&train, cfg, iteration)?;
        let ds = match select_clusters(&train, &ca, &cfg.rules) {
            Ok(ds) => ds,
            Err(SelectionError::EmptySelection { .. }) => {
                if records.is_empty() {
                    return Err(PipelineError::EmptySelection { iteration });
                }
                log::warn!("iteration {iteration}: empty selection, stopping");
                stop = StopReason::EmptySelection { iteration };
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let seed = cfg.seed.wrapping_add(iteration as u64);
        let pk = PkConfig { seed, ..cfg.pk };
        let batches = pk_epoch(&ds, &pk).unwrap_or_else(|e| {
            log::warn!("iteration {iteration}: no PK batches: {e}");
            Vec::new()
        });
        let purity = selected_purity(&train, &ds);
        let out = trainer.train(&TrainInput {
            iteration,
            seed,
            train: &train,
            dataset: &ds,
            batches: &batches,
            query: &query,
            gallery: &gallery,
        })?;
        train = out.train;
        if let Some(q) = out.query {
            query = q;
        }
        if let Some(g) = out.gallery {
            gallery = g;
        }
        let eval = evaluate_sets(&query, &gallery, cfg.eval_metric, cfg.max_rank)?;
        log::info!(
            "iteration {iteration}: clusters {} -> {} selected ({:.2}%), rank-1 {:.4}, mAP {:.4}",
            ca.n_clusters,
            ds.n_identities,
            ds.report.portion_selected,
            eval.rank(1),
            eval.map
        );
        let improved = records.is_empty() || eval.map > records[best].eval.map + cfg.min_delta;
        records.push(IterationRecord {
            iteration,
            n_clusters_raw: ca.n_clusters,
            n_clusters_selected: ds.n_identities,
            portion_selected: ds.report.portion_selected,
            selected_purity: purity,
            eval,
            wall_time: started.elapsed(),
        });
        if improved {
            best = records.len() - 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop = StopReason::Patience;
                break;
            }
        }
    }
    Ok(LoopOutcome { records, best, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = LoopConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.patience = 0;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let cfg = LoopConfig {
            trainer: TrainerKind::Mock { alpha: 0.0 },
            ..LoopConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overlapping_ids_rejected() {
        let spec = SyntheticSpec {
            n_identities: 4,
            samples_per_identity: 4,
            n_cameras: 2,
            dim: 4,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let err = run_loop(&data.train, &data.train, &data.gallery, &LoopConfig::default(), None);
        assert!(matches!(err, Err(PipelineError::OverlappingIds(_))));
    }
}
