use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-instance scores and hard labels from one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionSet {
    /// Threshold scores with the strict convention: label 1 iff score > threshold.
    pub fn from_scores(ids: Vec<u64>, scores: Vec<f64>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} outside (0, 1)"
            )));
        }
        if ids.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                got: scores.len(),
            });
        }
        let labels = scores.iter().map(|&p| u8::from(p > threshold)).collect();
        Ok(Self {
            ids,
            scores,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
