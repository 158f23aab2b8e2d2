//! Evaluation protocol: metrics, the downstream logistic model, the simulated
//! annotator and the three-mode ablation over chronological test parts.

pub mod harness;
pub mod metrics;
pub mod model;
pub mod sampling;

pub use harness::{
    featurize, run_ablation, run_protocol, write_part_csv, AblationOutcome, AblationRun, EvalReport, HarnessConfig,
    HarnessError, Mode, PartMetrics, PoolSource, Protocol, RunManifest,
};
pub use metrics::{recall_at_threshold, roc_auc, MetricError};
pub use model::{train_linear, LinearModel, TrainConfig, TrainError};
pub use sampling::{oracle_annotate, sample_annotation_batch, sample_classes};
