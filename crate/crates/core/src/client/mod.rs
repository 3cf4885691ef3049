//! Client-side logic: loss ledger, sample selection, local training and
//! metadata reporting.

mod ledger;
mod metadata;
mod selection;

pub use ledger::{clamp_loss, LossLedger};
pub use metadata::{build_metadata, exact_metadata, Metadata};
pub use selection::{
    max_trainable_size, select_fixed_count, select_samples, select_top_loss, split_by_threshold,
    SelectionResult,
};

use rand::seq::IndexedRandom;

use crate::config::{ExperimentConfig, Method};
use crate::error::ModelError;
use crate::model::{forward_losses, train_from, TrainOutcome};
use crate::rng::{stream, Purpose, RandomStream};
use crate::types::{ClientProfile, ClientReport, RoundPlan};

/// Training hyperparameters a client needs for one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClientSettings {
    pub method: Method,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub prox_mu: f64,
    /// Share of the selection drawn from over-threshold samples.
    pub p: f64,
    pub noise_factor: f64,
    pub loss_clamp: f64,
}

impl ClientSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            method: cfg.method,
            local_epochs: cfg.local_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            prox_mu: if cfg.method == Method::Fedavg { 0.0 } else { cfg.prox_mu },
            p: cfg.fb_params.p,
            noise_factor: cfg.noise_factor,
            loss_clamp: cfg.loss_clamp,
        }
    }
}

/// Independent random streams for one client in one round.
pub struct ClientStreams {
    pub latency: RandomStream,
    pub selection: RandomStream,
    pub training: RandomStream,
    pub metadata: RandomStream,
}

impl ClientStreams {
    pub fn new(seed: u64, client: usize, round: usize) -> Self {
        Self {
            latency: stream(seed, Purpose::Latency, client, round),
            selection: stream(seed, Purpose::Selection, client, round),
            training: stream(seed, Purpose::Training, client, round),
            metadata: stream(seed, Purpose::Metadata, client, round),
        }
    }
}

/// What a client hands back at the end of a round.
#[derive(Clone, Debug, PartialEq)]
pub enum RoundOutcome {
    Completed(ClientReport),
    /// The client could not upload before the deadline.
    /// `completion_time` is when it would have finished.
    TimedOut {
        client_id: usize,
        completion_time: f64,
        observed_batch_latency: f64,
    },
}

impl RoundOutcome {
    pub fn client_id(&self) -> usize {
        match self {
            RoundOutcome::Completed(r) => r.client_id,
            RoundOutcome::TimedOut { client_id, .. } => *client_id,
        }
    }

    pub fn completion_time(&self) -> f64 {
        match self {
            RoundOutcome::Completed(r) => r.completion_time,
            RoundOutcome::TimedOut { completion_time, .. } => *completion_time,
        }
    }

    pub fn report(&self) -> Option<&ClientReport> {
        match self {
            RoundOutcome::Completed(r) => Some(r),
            RoundOutcome::TimedOut { .. } => None,
        }
    }
}

fn steps(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// Runs one client for one round.
///
/// Latencies for this round (download, upload, per-batch) are drawn from the
/// client's trace. Methods that select by loss first run a forward pass over
/// the whole dataset if the ledger is still empty; that pass costs one batch
/// latency per batch. Training then runs as many whole epochs as fit before
/// the deadline: FedAvg needs all `E`, the other methods accept at least one.
pub fn run_client_round(
    profile: &ClientProfile,
    ledger: &mut LossLedger,
    plan: &RoundPlan,
    settings: &ClientSettings,
    streams: &mut ClientStreams,
) -> Result<RoundOutcome, ModelError> {
    let dataset = &profile.dataset;
    let n = dataset.len();
    let global = plan.model_version.as_ref();
    let epochs_wanted = settings.local_epochs;
    let batch = settings.batch_size.max(1);
    let lt = plan.loss_threshold;

    let dl = *profile.download_samples.choose(&mut streams.latency).expect("non-empty trace");
    let ul = *profile.upload_samples.choose(&mut streams.latency).expect("non-empty trace");
    let b = *profile.batch_latency_samples.choose(&mut streams.latency).expect("non-empty trace");

    let mut forward_time = 0.0;
    if settings.method.needs_ledger_for_selection() && !ledger.is_initialized() {
        let all: Vec<usize> = (0..n).collect();
        let losses = forward_losses(global, dataset, &all)?;
        ledger.initialize(losses.into_values().collect(), plan.round_index, settings.loss_clamp);
        forward_time = steps(n, batch) as f64 * b;
    }

    let timed_out = |completion_time: f64| RoundOutcome::TimedOut {
        client_id: profile.id,
        completion_time,
        observed_batch_latency: b,
    };

    // Samples per epoch and the fixed selection, if any.
    let per_epoch: usize;
    let mut selected: Option<Vec<usize>> = None;
    let budget = plan.deadline - forward_time;
    let s = || {
        max_trainable_size(
            profile.mean_batch_latency(),
            budget,
            epochs_wanted,
            batch,
            profile.mean_download(),
            profile.mean_upload(),
        )
    };
    match settings.method {
        Method::Fedavg | Method::Prox => {
            per_epoch = n;
            selected = Some((0..n).collect());
        }
        Method::Fedbalancer => {
            let r = select_samples(ledger, lt, s(), settings.p, &mut streams.selection);
            per_epoch = r.selected_indices.len();
            selected = Some(r.selected_indices);
        }
        Method::SampleSelectionBaseline => {
            let pick = select_top_loss(ledger, s());
            per_epoch = pick.len();
            selected = Some(pick);
        }
        Method::Oortbalancer => per_epoch = batch.min(n),
    }
    if per_epoch == 0 {
        return Ok(timed_out(plan.deadline.max(dl + forward_time + ul)));
    }

    let epoch_time = steps(per_epoch, batch) as f64 * b;
    let available = plan.deadline - dl - ul - forward_time;
    let fit = if plan.deadline == f64::INFINITY {
        usize::MAX
    } else if available <= 0.0 {
        0
    } else {
        (available / epoch_time).floor().min(usize::MAX as f64) as usize
    };
    let epochs = if settings.method.allows_partial_epochs() {
        fit.min(epochs_wanted)
    } else if fit >= epochs_wanted {
        epochs_wanted
    } else {
        0
    };
    let finish = |e: usize| dl + forward_time + e as f64 * epoch_time + ul;
    if epochs == 0 {
        let e = if settings.method.allows_partial_epochs() { 1 } else { epochs_wanted };
        return Ok(timed_out(finish(e)));
    }

    let snapshot = ledger.is_initialized();
    let mut selected_count = 0;
    let mut selected_loss_sum = 0.0;
    let outcome: TrainOutcome = match selected {
        Some(sel) => {
            selected_count = sel.len();
            if snapshot {
                selected_loss_sum = sel.iter().map(|&i| ledger.loss(i)).sum();
            }
            train_from(
                global,
                global,
                dataset,
                &sel,
                epochs,
                batch,
                settings.learning_rate,
                settings.prox_mu,
                &mut streams.training,
            )?
        }
        None => {
            // One fresh batch per epoch, reselected against the updated ledger.
            let mut weights = global.clone();
            for _ in 0..epochs {
                let r = select_fixed_count(ledger, lt, per_epoch, settings.p, &mut streams.selection);
                selected_count += r.selected_indices.len();
                selected_loss_sum += r.selected_indices.iter().map(|&i| ledger.loss(i)).sum::<f64>();
                let step = train_from(
                    &weights,
                    global,
                    dataset,
                    &r.selected_indices,
                    1,
                    batch,
                    settings.learning_rate,
                    settings.prox_mu,
                    &mut streams.training,
                )?;
                for (&i, &l) in &step.per_sample_losses {
                    ledger.update(i, l, settings.loss_clamp);
                }
                weights = step.updated_weights;
            }
            TrainOutcome {
                updated_weights: weights,
                per_sample_losses: Default::default(),
                epochs_completed: epochs,
            }
        }
    };

    if ledger.is_initialized() {
        for (&i, &l) in &outcome.per_sample_losses {
            ledger.update(i, l, settings.loss_clamp);
        }
    } else if outcome.per_sample_losses.len() == n {
        ledger.initialize(
            outcome.per_sample_losses.values().copied().collect(),
            plan.round_index,
            settings.loss_clamp,
        );
    }
    if !snapshot {
        selected_loss_sum = outcome
            .per_sample_losses
            .values()
            .map(|&l| clamp_loss(l, settings.loss_clamp))
            .sum();
    }

    let meta = if ledger.is_initialized() {
        let all = ledger.losses();
        let ot: Vec<f64> = all.iter().copied().filter(|&l| l >= lt).collect();
        build_metadata(all, &ot, settings.noise_factor, &mut streams.metadata)
    } else {
        build_metadata(&[], &[], settings.noise_factor, &mut streams.metadata)
    };

    Ok(RoundOutcome::Completed(ClientReport {
        client_id: profile.id,
        weights: outcome.updated_weights,
        epochs_completed: epochs,
        completion_time: finish(epochs),
        meta_llow: meta.llow,
        meta_lhigh: meta.lhigh,
        meta_ot_loss_sq_sum: meta.ot_loss_sq_sum,
        meta_ot_len: meta.ot_len,
        selected_count,
        selected_loss_sum,
        num_samples: n,
        observed_batch_latency: b,
    }))
}
