//! Round engine driving clients and server against a simulated clock.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::client::{run_client_round, ClientSettings, ClientStreams, LossLedger, RoundOutcome};
use crate::config::{ClientSelection, DeadlinePolicy, ExperimentConfig};
use crate::data::{gen_traces, load_traces, DatasetHandle, SyntheticTask, TraceFile};
use crate::error::SimError;
use crate::model::{accuracy, init_model, Layout, WeightVector};
use crate::rng::{stream, Purpose};
use crate::server::{
    aggregate, baseline_deadline, random_cohort, round_utility, select_cohort, select_deadline,
    select_loss_threshold, stat_util, CapabilityTable, ControllerState, ControllerUpdate,
};
use crate::stats::percentile;
use crate::types::{ClientProfile, ClientReport, RoundPlan};

/// One executed round.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub deadline: f64,
    pub loss_threshold: f64,
    /// Ratios in effect while the round ran.
    pub ltr: f64,
    pub ddlr: f64,
    pub cohort: Vec<usize>,
    pub completed: Vec<usize>,
    pub timed_out: Vec<usize>,
    pub duration: f64,
    /// Simulated seconds elapsed at the end of this round.
    pub wallclock: f64,
    pub test_accuracy: f64,
    pub u_r: f64,
    /// Efficiency peaks bracketing an adaptive deadline.
    pub dl: Option<f64>,
    pub dh: Option<f64>,
    /// Share of completers' ledger losses above the median ledger loss seen
    /// after the first round with completers.
    pub informative_fraction: Option<f64>,
}

/// Audit trail of server decisions.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    ThresholdSelected { round: usize, lt: f64, ltr: f64 },
    /// No reports arrived, so the previous threshold carries over.
    ThresholdFallback { round: usize, lt: f64 },
    DeadlineSelected { round: usize, deadline: f64, dl: f64, dh: f64, ddlr: f64 },
    ControllerUpdated { round: usize, update: ControllerUpdate },
}

/// Everything a finished run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub final_weights: WeightVector,
    pub events: Vec<SimEvent>,
}

/// Live experiment state.
pub struct Simulation {
    cfg: ExperimentConfig,
    settings: ClientSettings,
    profiles: Vec<ClientProfile>,
    ledgers: Vec<LossLedger>,
    table: CapabilityTable,
    test_set: DatasetHandle,
    weights: Arc<WeightVector>,
    controller: ControllerState,
    lt: f64,
    utilities: Vec<Option<f64>>,
    one_t: f64,
    wallclock: f64,
    round: usize,
    reference_median: Option<f64>,
    events: Vec<SimEvent>,
    pool: rayon::ThreadPool,
}

fn client_traces(cfg: &ExperimentConfig) -> Result<TraceFile, SimError> {
    let t = &cfg.traces;
    let traces = match &t.path {
        Some(path) => load_traces(path)?,
        None => gen_traces(
            cfg.num_clients,
            t.batch_latency,
            t.network,
            t.heterogeneity_spread,
            t.samples_per_client,
            &mut stream(cfg.seed, Purpose::TraceGen, 0, 0),
        )?,
    };
    if traces.len() < cfg.num_clients {
        return Err(SimError::TraceTooSmall {
            available: traces.len(),
            needed: cfg.num_clients,
        });
    }
    Ok(traces)
}

impl Simulation {
    /// Builds data, traces and the initial model. `threads` sizes the worker
    /// pool; `None` uses rayon's default.
    pub fn new(cfg: ExperimentConfig, threads: Option<usize>) -> Result<Self, SimError> {
        cfg.validate()?;
        let d = &cfg.data;
        let mut data_rng = stream(cfg.seed, Purpose::DataGen, 0, 0);
        let task = SyntheticTask::new(d.input_dim, d.num_classes, d.class_separation, &mut data_rng)?;
        let datasets = task.gen_clients(
            cfg.num_clients,
            &d.samples_per_client,
            d.dirichlet_alpha,
            d.noise_frac,
            0,
            &mut data_rng,
        )?;
        let total: usize = datasets.iter().map(|ds| ds.len()).sum();
        let test_len = ((total as f64 * d.test_fraction / (1.0 - d.test_fraction)).round() as usize).max(1);
        let test_set = task.gen_iid(
            test_len,
            cfg.num_clients,
            total,
            &mut stream(cfg.seed, Purpose::TestSet, 0, 0),
        );

        let traces = client_traces(&cfg)?;
        let profiles = datasets
            .into_iter()
            .zip(&traces.records)
            .enumerate()
            .map(|(i, (ds, rec))| {
                ClientProfile::from_trace(rec, ds).map(|mut p| {
                    p.id = i;
                    p
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let layout = Layout::new(d.input_dim, cfg.hidden_dim, d.num_classes);
        let weights = init_model(layout, &mut stream(cfg.seed, Purpose::ModelInit, 0, 0));
        let table = CapabilityTable::build(&profiles, cfg.seed);
        let one_t = table.mean_full_data_time(cfg.local_epochs, cfg.batch_size);

        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| SimError::ThreadPool(e.to_string()))?;

        Ok(Self {
            settings: ClientSettings::from_config(&cfg),
            ledgers: vec![LossLedger::new(); profiles.len()],
            utilities: vec![None; profiles.len()],
            controller: ControllerState::new(&cfg.fb_params),
            profiles,
            table,
            test_set,
            weights: Arc::new(weights),
            lt: 0.0,
            one_t,
            wallclock: 0.0,
            round: 0,
            reference_median: None,
            events: Vec::new(),
            pool,
            cfg,
        })
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn wallclock(&self) -> f64 {
        self.wallclock
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn profiles(&self) -> &[ClientProfile] {
        &self.profiles
    }

    pub fn ledger(&self, client: usize) -> &LossLedger {
        &self.ledgers[client]
    }

    /// Mean full-data completion time over all clients, measured before
    /// training (the fixed 1T deadline).
    pub fn one_t(&self) -> f64 {
        self.one_t
    }

    /// True once the round cap or the wall-clock budget is reached.
    pub fn finished(&self) -> bool {
        self.round >= self.cfg.rounds || self.cfg.wallclock_budget_s.is_some_and(|b| self.wallclock >= b)
    }

    fn pick_cohort(&self, round: usize) -> Vec<usize> {
        let mut rng = stream(self.cfg.seed, Purpose::Cohort, 0, round);
        match self.cfg.client_selection {
            ClientSelection::Random => random_cohort(self.cfg.num_clients, self.cfg.cohort_size, &mut rng),
            ClientSelection::StatUtil => {
                select_cohort(&self.utilities, self.cfg.cohort_size, self.cfg.stat_util_epsilon, &mut rng)
            }
        }
    }

    /// Runs the next round and advances the clock.
    pub fn run_round(&mut self) -> Result<RoundRecord, SimError> {
        self.round += 1;
        let round = self.round;
        let cfg = &self.cfg;
        let uses_lt = cfg.method.uses_loss_threshold();
        let (ltr, ddlr) = (self.controller.ltr, self.controller.ddlr);

        let cohort = self.pick_cohort(round);
        let estimates = self.table.estimates(&cohort)?;
        let (deadline, dl, dh) = if cfg.deadline_policy == DeadlinePolicy::AdaptiveDdlE {
            let c = select_deadline(&estimates, cfg.local_epochs, cfg.batch_size, ddlr, cfg.literal_train_time)?;
            self.events.push(SimEvent::DeadlineSelected {
                round,
                deadline: c.deadline,
                dl: c.dl,
                dh: c.dh,
                ddlr,
            });
            (c.deadline, Some(c.dl), Some(c.dh))
        } else {
            let ddl = baseline_deadline(cfg.deadline_policy, &estimates, cfg.local_epochs, cfg.batch_size, self.one_t)?;
            (ddl, None, None)
        };
        let lt = if uses_lt { self.lt } else { 0.0 };
        let plan = RoundPlan {
            round_index: round,
            loss_threshold: lt,
            deadline,
            cohort: cohort.clone(),
            model_version: Arc::clone(&self.weights),
        };

        let mut work: Vec<(usize, LossLedger)> = cohort
            .iter()
            .map(|&c| (c, std::mem::take(&mut self.ledgers[c])))
            .collect();
        let (profiles, settings, seed) = (&self.profiles, &self.settings, cfg.seed);
        let results: Vec<_> = self.pool.install(|| {
            work.par_iter_mut()
                .map(|(c, ledger)| {
                    let mut streams = ClientStreams::new(seed, *c, round);
                    run_client_round(&profiles[*c], ledger, &plan, settings, &mut streams)
                })
                .collect()
        });
        for (c, ledger) in work {
            self.ledgers[c] = ledger;
        }

        let mut outcomes = Vec::with_capacity(results.len());
        for (&c, r) in cohort.iter().zip(results) {
            outcomes.push(r.map_err(|source| SimError::Model { client: c, source })?);
        }
        let reports: Vec<ClientReport> = outcomes.iter().filter_map(|o| o.report().cloned()).collect();
        let completed: Vec<usize> = reports.iter().map(|r| r.client_id).collect();
        let timed_out: Vec<usize> = outcomes
            .iter()
            .filter(|o| matches!(o, RoundOutcome::TimedOut { .. }))
            .map(RoundOutcome::client_id)
            .collect();

        if !reports.is_empty() {
            self.weights = Arc::new(aggregate(&reports)?);
        }

        if uses_lt {
            if reports.is_empty() {
                self.events.push(SimEvent::ThresholdFallback { round, lt: self.lt });
            } else {
                let llow: Vec<f64> = reports.iter().map(|r| r.meta_llow).collect();
                let lhigh: Vec<f64> = reports.iter().map(|r| r.meta_lhigh).collect();
                self.lt = select_loss_threshold(&llow, &lhigh, ltr)?;
                self.events.push(SimEvent::ThresholdSelected { round, lt: self.lt, ltr });
            }
        }

        let lsum: f64 = reports.iter().map(|r| r.selected_loss_sum).sum();
        let l: usize = reports.iter().map(|r| r.selected_count).sum();
        let u_r = round_utility(lsum, l, deadline);
        if uses_lt {
            if let Some(update) = self.controller.update(round, u_r, &self.cfg.fb_params) {
                self.events.push(SimEvent::ControllerUpdated { round, update });
            }
        }

        for r in &reports {
            self.table.record_report(r)?;
            self.utilities[r.client_id] = Some(stat_util(r.meta_ot_loss_sq_sum, r.meta_ot_len));
        }
        for &c in &timed_out {
            self.utilities[c].get_or_insert(0.0);
        }

        let max_completion = reports.iter().map(|r| r.completion_time).fold(0.0, f64::max);
        let duration = if !timed_out.is_empty() && deadline.is_finite() {
            deadline
        } else if timed_out.is_empty() {
            max_completion
        } else {
            outcomes.iter().map(RoundOutcome::completion_time).fold(0.0, f64::max)
        };
        self.wallclock += duration;

        let informative_fraction = self.informative_fraction(&completed);
        Ok(RoundRecord {
            round,
            deadline,
            loss_threshold: lt,
            ltr,
            ddlr,
            cohort,
            completed,
            timed_out,
            duration,
            wallclock: self.wallclock,
            test_accuracy: accuracy(&self.weights, &self.test_set),
            u_r,
            dl,
            dh,
            informative_fraction,
        })
    }

    fn informative_fraction(&mut self, completed: &[usize]) -> Option<f64> {
        let losses: Vec<f64> = completed
            .iter()
            .filter(|&&c| self.ledgers[c].is_initialized())
            .flat_map(|&c| self.ledgers[c].losses().iter().copied())
            .collect();
        if losses.is_empty() {
            return None;
        }
        let median = *self.reference_median.get_or_insert_with(|| percentile(&losses, 50.0));
        Some(losses.iter().filter(|&&l| l > median).count() as f64 / losses.len() as f64)
    }

    /// Runs rounds until [`Simulation::finished`].
    pub fn run(mut self) -> Result<ExperimentOutcome, SimError> {
        let mut records = Vec::new();
        while !self.finished() {
            records.push(self.run_round()?);
        }
        Ok(ExperimentOutcome {
            records,
            final_weights: Arc::unwrap_or_clone(self.weights),
            events: self.events,
        })
    }
}

/// Runs a whole experiment on rayon's default pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, SimError> {
    Simulation::new(cfg.clone(), None)?.run()
}

/// As [`run_experiment`] with a worker pool of `threads` threads.
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutcome, SimError> {
    Simulation::new(cfg.clone(), Some(threads))?.run()
}
