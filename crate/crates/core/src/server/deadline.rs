use serde::Serialize;

use crate::config::DeadlinePolicy;
use crate::error::ServerError;
use crate::stats::percentile;

/// Server-side view of a client used for deadline estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClientEstimate {
    pub mean_download: f64,
    pub mean_upload: f64,
    pub mean_batch_latency: f64,
    /// Last reported over-threshold sample count.
    pub ot_len: f64,
    pub num_samples: usize,
}

/// Training time for `ot_len` samples over `epochs` epochs.
///
/// `ot_len` is rounded and treated as at least one. The default counts whole
/// batches, `floor((k − 1)/batch) + 1`; the literal variant uses the real
/// quotient `(k − 1)/batch`.
pub fn train_time_estimate(ot_len: f64, batch: usize, mean_batch_latency: f64, epochs: usize, literal: bool) -> f64 {
    let k = ot_len.round().max(1.0) as usize;
    let batch = batch.max(1);
    let batches = if literal {
        (k - 1) as f64 / batch as f64
    } else {
        ((k - 1) / batch + 1) as f64
    };
    batches * mean_batch_latency * epochs as f64
}

/// Predicted completion time: mean transfer plus estimated training.
pub fn completion_estimate(c: &ClientEstimate, epochs: usize, batch: usize, literal: bool) -> f64 {
    c.mean_download + c.mean_upload + train_time_estimate(c.ot_len, batch, c.mean_batch_latency, epochs, literal)
}

/// Completion time when training on the full local dataset.
pub fn full_data_time(c: &ClientEstimate, epochs: usize, batch: usize) -> f64 {
    let batches = c.num_samples.div_ceil(batch.max(1));
    c.mean_download + c.mean_upload + batches as f64 * c.mean_batch_latency * epochs as f64
}

/// Fraction of clients finished by `t` divided by `t`, the deadline
/// efficiency. Values are `(count, t)` pairs to keep comparisons exact.
fn count_within(sorted: &[f64], t: u64) -> usize {
    sorted.partition_point(|&ct| ct <= t as f64)
}

/// Smallest positive integer deadline maximizing `#{ct ≤ t} / t`.
///
/// The ratio only rises where the count jumps, so it is evaluated at
/// `max(1, ceil(ct))` for each finite completion time. Non-finite times never
/// count.
pub fn find_peak_ddl_e(times: &[f64]) -> Result<f64, ServerError> {
    let mut sorted: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
    if sorted.is_empty() {
        return Err(ServerError::EmptyCohort);
    }
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(usize, u64)> = None;
    for &ct in &sorted {
        let t = (ct.ceil().max(1.0)) as u64;
        let count = count_within(&sorted, t);
        let better = match best {
            None => true,
            Some((bc, bt)) => {
                let lhs = count as u128 * bt as u128;
                let rhs = bc as u128 * t as u128;
                lhs > rhs || (lhs == rhs && t < bt)
            }
        };
        if better {
            best = Some((count, t));
        }
    }
    Ok(best.expect("non-empty").1 as f64)
}

/// `(t, #{ct ≤ t} / t)` for every integer `t` in `1..=t_max`.
pub fn ddl_e_curve(times: &[f64], t_max: u64) -> Vec<(u64, f64)> {
    let mut sorted: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    (1..=t_max)
        .map(|t| (t, count_within(&sorted, t) as f64 / t as f64))
        .collect()
}

/// Chosen deadline and the two peaks it interpolates between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeadlineChoice {
    pub deadline: f64,
    /// Peak for a single epoch.
    pub dl: f64,
    /// Peak for all local epochs.
    pub dh: f64,
}

/// `dl + (dh − dl)·ddlr`, where `dl` and `dh` are the efficiency peaks for
/// one epoch and for `epochs` epochs.
pub fn select_deadline(
    cohort: &[ClientEstimate],
    epochs: usize,
    batch: usize,
    ddlr: f64,
    literal: bool,
) -> Result<DeadlineChoice, ServerError> {
    let times = |e: usize| -> Vec<f64> {
        cohort.iter().map(|c| completion_estimate(c, e, batch, literal)).collect()
    };
    let dl = find_peak_ddl_e(&times(1))?;
    let dh = find_peak_ddl_e(&times(epochs))?;
    Ok(DeadlineChoice {
        deadline: dl + (dh - dl) * ddlr,
        dl,
        dh,
    })
}

/// Deadline for the non-adaptive policies. `one_t` is the mean pre-training
/// full-data completion time over all clients.
pub fn baseline_deadline(
    policy: DeadlinePolicy,
    cohort: &[ClientEstimate],
    epochs: usize,
    batch: usize,
    one_t: f64,
) -> Result<f64, ServerError> {
    match policy {
        DeadlinePolicy::Fixed1T => Ok(one_t),
        DeadlinePolicy::Fixed2T => Ok(2.0 * one_t),
        DeadlinePolicy::WaitForAll => Ok(f64::INFINITY),
        DeadlinePolicy::SmartPc => {
            if cohort.is_empty() {
                return Err(ServerError::EmptyCohort);
            }
            let times: Vec<f64> = cohort.iter().map(|c| full_data_time(c, epochs, batch)).collect();
            Ok(percentile(&times, 80.0))
        }
        DeadlinePolicy::AdaptiveDdlE => unreachable!("adaptive deadlines come from select_deadline"),
    }
}
