//! Human-in-the-loop fraud feedback propagation.
//!
//! Transactions that share attribute values (phone, device, payment, ...) are
//! linked into a weighted graph. Analyst-assigned `isFraud` scores on a few
//! nodes are then diffused hop by hop along those links, discounted by edge
//! weight and node similarity, and the resulting scores are fed to a
//! downstream classifier whose uplift is measured under three ablation modes.
//!
//! Module map:
//!
//! * [`config`]: attribute schema, propagation parameters, JSON config file.
//! * [`graph`]: ingestion, inverted-index graph construction, BFS neighborhoods.
//! * [`snapshot`]: versioned binary graph snapshots.
//! * [`similarity`]: hashed attribute encodings and cosine similarity.
//! * [`propagation`]: seed initialization and frontier propagation.
//! * [`synth`]: planted-ring synthetic datasets and chronological splits.
//! * [`eval`]: metrics, logistic model, simulated annotator, ablation protocol.

pub mod annotation;
pub mod config;
pub mod eval;
pub mod graph;
pub mod hash;
pub mod propagation;
pub mod similarity;
pub mod snapshot;
pub mod synth;

pub use annotation::AnnotationEvent;
pub use config::{load_config, validate_schema, AttributeSchema, ConfigError, PropagationConfig};
pub use graph::{build_graph, edge_weight, ingest, GraphError, GraphStats, Transaction, TransactionGraph};
pub use propagation::{init_scores, propagate, propagate_hop, PropagationReport, ScoreState, Termination};
pub use similarity::{cosine, encode, CosineSimilarity, NodeEncoding, Similarity};
