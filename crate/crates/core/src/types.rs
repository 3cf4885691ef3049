//! Types exchanged between clients, server and simulator.

use std::sync::Arc;

use crate::data::{DatasetHandle, TraceRecord};
use crate::error::DataError;
use crate::model::WeightVector;
use crate::stats::mean;

/// A client's latency trace and local data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientProfile {
    pub id: usize,
    /// Seconds per model download.
    pub download_samples: Vec<f64>,
    /// Seconds per model upload.
    pub upload_samples: Vec<f64>,
    /// Seconds per training batch.
    pub batch_latency_samples: Vec<f64>,
    pub dataset: DatasetHandle,
}

impl ClientProfile {
    pub fn from_trace(record: &TraceRecord, dataset: DatasetHandle) -> Result<Self, DataError> {
        let positive = |field: &'static str, list: &[f64]| {
            if list.is_empty() {
                Err(DataError::EmptyList {
                    line: 0,
                    id: record.id,
                    field,
                })
            } else if list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                Err(DataError::NonPositive {
                    line: 0,
                    id: record.id,
                    field,
                })
            } else {
                Ok(())
            }
        };
        positive("download_s", &record.download_s)?;
        positive("upload_s", &record.upload_s)?;
        positive("batch_latency_s", &record.batch_latency_s)?;
        Ok(Self {
            id: record.id as usize,
            download_samples: record.download_s.clone(),
            upload_samples: record.upload_s.clone(),
            batch_latency_samples: record.batch_latency_s.clone(),
            dataset,
        })
    }

    pub fn mean_download(&self) -> f64 {
        mean(&self.download_samples)
    }

    pub fn mean_upload(&self) -> f64 {
        mean(&self.upload_samples)
    }

    pub fn mean_batch_latency(&self) -> f64 {
        mean(&self.batch_latency_samples)
    }

    pub fn num_samples(&self) -> usize {
        self.dataset.len()
    }
}

/// What the server broadcasts at the start of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundPlan {
    pub round_index: usize,
    pub loss_threshold: f64,
    /// Seconds; infinite only under the wait-for-all policy.
    pub deadline: f64,
    /// Ascending client ids.
    pub cohort: Vec<usize>,
    pub model_version: Arc<WeightVector>,
}

/// A completed client's upload: its locally trained weights plus noised
/// metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    /// Locally trained model (the aggregated quantity).
    pub weights: WeightVector,
    pub epochs_completed: usize,
    /// Seconds from round start until the upload finished.
    pub completion_time: f64,
    pub meta_llow: f64,
    pub meta_lhigh: f64,
    pub meta_ot_loss_sq_sum: f64,
    pub meta_ot_len: f64,
    /// Number of samples selected for training this round.
    pub selected_count: usize,
    /// Ledger loss sum of the selected samples at selection time.
    pub selected_loss_sum: f64,
    /// Local dataset size, the aggregation weight.
    pub num_samples: usize,
    /// Per-batch latency the client experienced this round.
    pub observed_batch_latency: f64,
}
