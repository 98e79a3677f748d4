//! Epoch records and checkpoint selection shared by both fine-tuning tasks.

use serde::{Deserialize, Serialize};

use crate::eval::MetricsReport;
use crate::model::Checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub step_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Checkpoint of the epoch with the best validation micro-F1 (earliest
    /// on ties); the last epoch when there is no validation data.
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<FinetuneEpoch>,
    /// Validation report of the selected epoch, if validation data exists.
    pub report: Option<MetricsReport>,
}

/// Picks the selected epoch: highest validation F1 (earliest on ties), or
/// the last epoch if no validation score exists.
pub(crate) fn improves(best: Option<f64>, candidate: Option<f64>) -> bool {
    match (best, candidate) {
        (None, _) => true,
        (Some(_), None) => true,
        (Some(b), Some(c)) => c > b,
    }
}
