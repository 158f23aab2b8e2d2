use serde::{Deserialize, Serialize};

/// Cycle index of annotations made before model training.
pub const PRETRAIN_CYCLE: i64 = -1;

/// One analyst decision on one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub node_id: String,
    /// `isFraud` score on the 0..=100 scale; 100 means annotated fraudulent.
    pub score: f64,
    pub annotator: String,
    /// Milliseconds since epoch.
    pub ts: i64,
    /// Test-part index, or [`PRETRAIN_CYCLE`].
    pub cycle: i64,
}

impl AnnotationEvent {
    pub fn new(node_id: impl Into<String>, score: f64) -> Self {
        Self {
            node_id: node_id.into(),
            score,
            annotator: "anonymous".to_string(),
            ts: 0,
            cycle: PRETRAIN_CYCLE,
        }
    }
}
