//! Pseudo-label refinement for unsupervised domain adaptation in person
//! re-identification.
//!
//! The crate covers the whole refinement cycle on pre-extracted embeddings:
//! camera-guided normalization ([`camera_norm`]), DBSCAN and k-means
//! ([`clustering`]), reliability-based cluster selection ([`selection`]),
//! PK batch emission ([`sampler`]), CMC/mAP evaluation ([`metrics`]),
//! k-reciprocal re-ranking ([`rerank`]) and the iterative loop with a
//! pluggable trainer ([`pipeline`]).

pub mod camera_norm;
pub mod clustering;
pub mod csv_io;
pub mod distance;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod rerank;
pub mod sampler;
pub mod selection;

pub use camera_norm::{camera_normalize, camera_statistics, CameraStats};
pub use clustering::{
    dbscan, k_heuristic, kmeans, sweep_eps, ClusterAssignment, ClusterError, ClusterParams,
    DbscanParams, NOISE,
};
pub use distance::{pairwise_distances, self_distances, DistanceMatrix, Metric};
pub use features::{
    l2_normalize_rows, load_features, save_features, FeatureError, FeatureSet, SampleRef,
    FORMAT_VERSION,
};
pub use metrics::{evaluate, EvalResult, MetricsError};
pub use pipeline::{
    generate_synthetic, mock_train, run_loop, IterationRecord, LoopConfig, LoopOutcome,
    PipelineError, SyntheticSpec,
};
pub use rerank::{k_reciprocal_rerank, RerankParams};
pub use sampler::{pk_epoch, Batch, PkConfig};
pub use selection::{select_clusters, PseudoLabelDataset, SelectionReport, SelectionRules};
