use crate::data::PRE_FL_LATENCY_SAMPLES;
use crate::error::ServerError;
use crate::rng::{stream, Purpose};
use crate::types::{ClientProfile, ClientReport};

use rand::seq::IndexedRandom;

use super::deadline::ClientEstimate;

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    latency_sum: f64,
    latency_count: usize,
    mean_download: f64,
    mean_upload: f64,
    ot_len: f64,
    num_samples: usize,
}

/// What the server knows about each client's speed.
///
/// Batch latency starts from a pre-training profile of a few draws from the
/// client's trace and then accumulates every latency a completing client
/// reports. Transfer times are the client's trace means. The over-threshold
/// count starts at the dataset size and follows the latest report.
#[derive(Clone, Debug, PartialEq)]
pub struct CapabilityTable {
    entries: Vec<Entry>,
}

impl CapabilityTable {
    pub fn build(profiles: &[ClientProfile], seed: u64) -> Self {
        let entries = profiles
            .iter()
            .map(|p| {
                let mut rng = stream(seed, Purpose::PreFlProfile, p.id, 0);
                let latency_sum = (0..PRE_FL_LATENCY_SAMPLES)
                    .map(|_| *p.batch_latency_samples.choose(&mut rng).expect("non-empty trace"))
                    .sum();
                Entry {
                    latency_sum,
                    latency_count: PRE_FL_LATENCY_SAMPLES,
                    mean_download: p.mean_download(),
                    mean_upload: p.mean_upload(),
                    ot_len: p.num_samples() as f64,
                    num_samples: p.num_samples(),
                }
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn estimate(&self, id: usize) -> Result<ClientEstimate, ServerError> {
        let e = self.entries.get(id).ok_or(ServerError::MissingCapability(id))?;
        Ok(ClientEstimate {
            mean_download: e.mean_download,
            mean_upload: e.mean_upload,
            mean_batch_latency: e.latency_sum / e.latency_count as f64,
            ot_len: e.ot_len,
            num_samples: e.num_samples,
        })
    }

    pub fn estimates(&self, ids: &[usize]) -> Result<Vec<ClientEstimate>, ServerError> {
        ids.iter().map(|&id| self.estimate(id)).collect()
    }

    pub fn record_report(&mut self, report: &ClientReport) -> Result<(), ServerError> {
        let e = self
            .entries
            .get_mut(report.client_id)
            .ok_or(ServerError::MissingCapability(report.client_id))?;
        e.latency_sum += report.observed_batch_latency;
        e.latency_count += 1;
        e.ot_len = report.meta_ot_len;
        Ok(())
    }

    /// Mean over all clients of the estimated full-data completion time.
    pub fn mean_full_data_time(&self, epochs: usize, batch: usize) -> f64 {
        let total: f64 = (0..self.entries.len())
            .map(|id| super::deadline::full_data_time(&self.estimate(id).expect("in range"), epochs, batch))
            .sum();
        total / self.entries.len().max(1) as f64
    }
}
