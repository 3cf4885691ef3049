//! Experiment configuration.
//!
//! A config is a JSON document whose top-level keys mirror
//! [`ExperimentConfig`]. Only `num_clients` and `cohort_size` are required;
//! everything else falls back to the defaults documented in `docs/config.md`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Client-side training protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full data, exactly `E` epochs; clients that cannot finish are dropped.
    Fedavg,
    /// Full data, as many whole epochs as fit (at least one), proximal term.
    Prox,
    /// Prox plus loss-threshold sample selection and adaptive deadlines.
    Fedbalancer,
    /// One loss-selected batch per local epoch.
    Oortbalancer,
    /// Prox with the client dataset capped at the highest-loss samples.
    SampleSelectionBaseline,
}

impl Method {
    /// Clients may report fewer than `E` epochs.
    pub fn allows_partial_epochs(self) -> bool {
        !matches!(self, Method::Fedavg)
    }

    /// The server runs loss-threshold selection and ltr/ddlr control.
    pub fn uses_loss_threshold(self) -> bool {
        matches!(self, Method::Fedbalancer | Method::Oortbalancer)
    }

    /// Clients need a loss ledger before choosing samples, which costs a
    /// whole-dataset forward pass on first selection.
    pub fn needs_ledger_for_selection(self) -> bool {
        matches!(
            self,
            Method::Fedbalancer | Method::Oortbalancer | Method::SampleSelectionBaseline
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fedavg => "fedavg",
            Method::Prox => "prox",
            Method::Fedbalancer => "fedbalancer",
            Method::Oortbalancer => "oortbalancer",
            Method::SampleSelectionBaseline => "sample_selection_baseline",
        }
    }
}

/// How each round's deadline is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeadlinePolicy {
    /// Mean full-data completion time `T`, measured before training.
    #[serde(rename = "fixed_1t")]
    Fixed1T,
    /// `2T`.
    #[serde(rename = "fixed_2t")]
    Fixed2T,
    /// 80th percentile of the cohort's predicted completion times.
    #[serde(rename = "smartpc")]
    SmartPc,
    /// No deadline.
    #[serde(rename = "wait_for_all")]
    WaitForAll,
    /// DDL-E peak interpolation driven by the deadline ratio.
    #[serde(rename = "adaptive_ddl_e")]
    AdaptiveDdlE,
}

impl DeadlinePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            DeadlinePolicy::Fixed1T => "fixed_1t",
            DeadlinePolicy::Fixed2T => "fixed_2t",
            DeadlinePolicy::SmartPc => "smartpc",
            DeadlinePolicy::WaitForAll => "wait_for_all",
            DeadlinePolicy::AdaptiveDdlE => "adaptive_ddl_e",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSelection {
    Random,
    StatUtil,
}

/// Controller parameters. Defaults are the recommended set
/// `{w, lss, dss, p} = {20, 0.05, 0.05, 1.00}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbParams {
    /// Control window in rounds.
    pub w: usize,
    /// Loss-threshold ratio step.
    pub lss: f64,
    /// Deadline ratio step.
    pub dss: f64,
    /// Fraction of selected samples drawn from the over-threshold group.
    pub p: f64,
    pub ltr_init: f64,
    pub ddlr_init: f64,
}

impl FbParams {
    /// Percentile reported as a client's low loss (the minimum).
    pub const LLOW_PERCENTILE: f64 = 0.0;
    /// Percentile reported as a client's high loss.
    pub const LHIGH_PERCENTILE: f64 = 80.0;
}

impl Default for FbParams {
    fn default() -> Self {
        Self {
            w: 20,
            lss: 0.05,
            dss: 0.05,
            p: 1.0,
            ltr_init: 0.0,
            ddlr_init: 1.0,
        }
    }
}

/// Distribution of per-client sample counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleCountDist {
    Fixed {
        count: usize,
    },
    /// `round(median · exp(sigma · z))`, clamped to `[min, max]`.
    Lognormal {
        median: f64,
        sigma: f64,
        min: usize,
        max: usize,
    },
}

impl Default for SampleCountDist {
    fn default() -> Self {
        SampleCountDist::Lognormal {
            median: 120.0,
            sigma: 0.6,
            min: 20,
            max: 600,
        }
    }
}

/// Synthetic classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    pub dirichlet_alpha: f64,
    /// Fraction of client labels flipped to a different class.
    pub noise_frac: f64,
    pub samples_per_client: SampleCountDist,
    /// Norm of every class mean; features are `N(mean_c, I)`.
    pub class_separation: f64,
    /// Share of all generated samples held back as the server's test set.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input_dim: 60,
            num_classes: 10,
            dirichlet_alpha: 0.5,
            noise_frac: 0.0,
            samples_per_client: SampleCountDist::default(),
            class_separation: 3.0,
            test_fraction: 0.1,
        }
    }
}

/// `median · exp(sigma · z)` with `z ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub median_s: f64,
    pub sigma: f64,
}

/// Latency traces: loaded from `path` when set, generated otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub path: Option<PathBuf>,
    /// `median_s` is the fastest client's mean batch latency; `sigma` is the
    /// per-sample jitter.
    pub batch_latency: LogNormalParams,
    /// Per-client mean transfer time and per-sample jitter, shared by the
    /// download and upload lists.
    pub network: LogNormalParams,
    /// Ratio between the slowest and fastest client's mean batch latency.
    pub heterogeneity_spread: f64,
    pub samples_per_client: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            path: None,
            batch_latency: LogNormalParams {
                median_s: 0.05,
                sigma: 0.2,
            },
            network: LogNormalParams {
                median_s: 2.0,
                sigma: 0.5,
            },
            heterogeneity_spread: 12.0,
            samples_per_client: 20,
        }
    }
}

/// Everything needed to reproduce one simulated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_clients: usize,
    pub cohort_size: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub prox_mu: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::method")]
    pub method: Method,
    #[serde(default = "defaults::deadline_policy")]
    pub deadline_policy: DeadlinePolicy,
    #[serde(default)]
    pub fb_params: FbParams,
    #[serde(default)]
    pub noise_factor: f64,
    #[serde(default = "defaults::client_selection")]
    pub client_selection: ClientSelection,

    /// Name used to group runs in comparisons; `method+policy` when absent.
    #[serde(default)]
    pub label: Option<String>,
    /// Width of the tanh hidden layer; 0 selects softmax regression.
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub traces: TraceConfig,
    /// When set, rounds continue until the simulated clock reaches this
    /// budget; `rounds` then acts as an upper bound.
    #[serde(default)]
    pub wallclock_budget_s: Option<f64>,
    /// Accuracy targets reported in the run summary.
    #[serde(default)]
    pub targets: Vec<f64>,
    /// Upper clamp on ledger losses.
    #[serde(default = "defaults::loss_clamp")]
    pub loss_clamp: f64,
    /// Share of cohort slots filled at random under `stat_util` selection.
    #[serde(default = "defaults::stat_util_epsilon")]
    pub stat_util_epsilon: f64,
    /// Estimate training time as `(len(OT) - 1) / batch · B · E` instead of
    /// the whole-batch count.
    #[serde(default)]
    pub literal_train_time: bool,
}

mod defaults {
    use super::*;

    pub fn local_epochs() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        10
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn rounds() -> usize {
        100
    }
    pub fn method() -> Method {
        Method::Fedavg
    }
    pub fn deadline_policy() -> DeadlinePolicy {
        DeadlinePolicy::Fixed1T
    }
    pub fn client_selection() -> ClientSelection {
        ClientSelection::Random
    }
    pub fn loss_clamp() -> f64 {
        50.0
    }
    pub fn stat_util_epsilon() -> f64 {
        0.1
    }
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(num_clients: usize, cohort_size: usize) -> Self {
        Self {
            num_clients,
            cohort_size,
            local_epochs: defaults::local_epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            prox_mu: 0.0,
            rounds: defaults::rounds(),
            seed: 0,
            method: defaults::method(),
            deadline_policy: defaults::deadline_policy(),
            fb_params: FbParams::default(),
            noise_factor: 0.0,
            client_selection: defaults::client_selection(),
            label: None,
            hidden_dim: 0,
            data: DataConfig::default(),
            traces: TraceConfig::default(),
            wallclock_budget_s: None,
            targets: Vec::new(),
            loss_clamp: defaults::loss_clamp(),
            stat_util_epsilon: defaults::stat_util_epsilon(),
            literal_train_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Run label: the explicit `label`, or `method+policy`.
    pub fn run_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            format!("{}+{}", self.method.as_str(), self.deadline_policy.as_str())
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        use ConfigError as E;
        if self.num_clients == 0 {
            return Err(E::invalid("num_clients", "num_clients must be at least 1"));
        }
        if self.cohort_size == 0 {
            return Err(E::invalid("cohort_size", "cohort_size must be at least 1"));
        }
        if self.cohort_size > self.num_clients {
            return Err(E::invalid("cohort_size", "cohort_size exceeds num_clients"));
        }
        if self.num_clients >= 1 << 24 {
            return Err(E::invalid("num_clients", "num_clients must be below 2^24"));
        }
        if self.local_epochs == 0 {
            return Err(E::invalid("local_epochs", "local_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(E::invalid("batch_size", "batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(E::invalid("learning_rate", "learning_rate must be positive"));
        }
        if !(self.prox_mu.is_finite() && self.prox_mu >= 0.0) {
            return Err(E::invalid("prox_mu", "prox_mu must be non-negative"));
        }
        if !(self.noise_factor.is_finite() && self.noise_factor >= 0.0) {
            return Err(E::invalid("noise_factor", "noise_factor must be non-negative"));
        }
        self.validate_fb_params()?;
        if self.method == Method::Fedbalancer && self.deadline_policy != DeadlinePolicy::AdaptiveDdlE
        {
            return Err(E::invalid(
                "deadline_policy",
                "method fedbalancer requires deadline_policy adaptive_ddl_e",
            ));
        }
        self.validate_data()?;
        self.validate_traces()?;
        if let Some(budget) = self.wallclock_budget_s {
            if !(budget.is_finite() && budget > 0.0) {
                return Err(E::invalid("wallclock_budget_s", "budget must be positive"));
            }
        }
        if self.targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(E::invalid("targets", "accuracy targets must lie in [0,1]"));
        }
        if !(self.loss_clamp.is_finite() && self.loss_clamp > 0.0) {
            return Err(E::invalid("loss_clamp", "loss_clamp must be positive"));
        }
        if !(0.0..=1.0).contains(&self.stat_util_epsilon) {
            return Err(E::invalid("stat_util_epsilon", "stat_util_epsilon outside [0,1]"));
        }
        Ok(())
    }

    fn validate_fb_params(&self) -> Result<(), ConfigError> {
        use ConfigError as E;
        let fb = &self.fb_params;
        if fb.w == 0 {
            return Err(E::invalid("fb_params.w", "w must be at least 1"));
        }
        if !(0.0..=1.0).contains(&fb.lss) {
            return Err(E::invalid("fb_params.lss", "lss outside [0,1]"));
        }
        if !(0.0..=1.0).contains(&fb.dss) {
            return Err(E::invalid("fb_params.dss", "dss outside [0,1]"));
        }
        if !(0.5..=1.0).contains(&fb.p) {
            return Err(E::invalid("fb_params.p", "p outside [0.5,1.0]"));
        }
        if !(0.0..=1.0).contains(&fb.ltr_init) {
            return Err(E::invalid("fb_params.ltr_init", "ltr_init outside [0,1]"));
        }
        if !(0.0..=1.0).contains(&fb.ddlr_init) {
            return Err(E::invalid("fb_params.ddlr_init", "ddlr_init outside [0,1]"));
        }
        Ok(())
    }

    fn validate_data(&self) -> Result<(), ConfigError> {
        use ConfigError as E;
        let d = &self.data;
        if d.input_dim == 0 {
            return Err(E::invalid("data.input_dim", "input_dim must be at least 1"));
        }
        if d.num_classes < 2 {
            return Err(E::invalid("data.num_classes", "num_classes must be at least 2"));
        }
        if !(d.dirichlet_alpha.is_finite() && d.dirichlet_alpha > 0.0) {
            return Err(E::invalid("data.dirichlet_alpha", "dirichlet_alpha must be positive"));
        }
        if !(0.0..1.0).contains(&d.noise_frac) {
            return Err(E::invalid("data.noise_frac", "noise_frac outside [0,1)"));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(E::invalid("data.test_fraction", "test_fraction outside (0,1)"));
        }
        if !(d.class_separation.is_finite() && d.class_separation >= 0.0) {
            return Err(E::invalid("data.class_separation", "class_separation must be non-negative"));
        }
        match d.samples_per_client {
            SampleCountDist::Fixed { count: 0 } => Err(E::invalid(
                "data.samples_per_client",
                "every client needs at least one sample",
            )),
            SampleCountDist::Lognormal {
                median,
                sigma,
                min,
                max,
            } if !(median > 0.0 && sigma >= 0.0 && min >= 1 && min <= max) => Err(E::invalid(
                "data.samples_per_client",
                "lognormal sample counts need median > 0, sigma >= 0, 1 <= min <= max",
            )),
            _ => Ok(()),
        }
    }

    fn validate_traces(&self) -> Result<(), ConfigError> {
        use ConfigError as E;
        let t = &self.traces;
        for (field, p) in [
            ("traces.batch_latency", t.batch_latency),
            ("traces.network", t.network),
        ] {
            if !(p.median_s.is_finite() && p.median_s > 0.0 && p.sigma.is_finite() && p.sigma >= 0.0)
            {
                return Err(E::invalid(field, "median_s must be positive and sigma non-negative"));
            }
        }
        if !(t.heterogeneity_spread.is_finite() && t.heterogeneity_spread >= 1.0) {
            return Err(E::invalid("traces.heterogeneity_spread", "spread must be at least 1"));
        }
        if t.samples_per_client < crate::data::PRE_FL_LATENCY_SAMPLES {
            return Err(E::invalid(
                "traces.samples_per_client",
                format!(
                    "need at least {} latency samples per client",
                    crate::data::PRE_FL_LATENCY_SAMPLES
                ),
            ));
        }
        Ok(())
    }
}

/// Reads and validates a JSON config.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(r#"{"num_clients": 10, "cohort_size": 5}"#).unwrap();
        assert_eq!(c.fb_params.ltr_init, 0.0);
        assert_eq!(c.fb_params.ddlr_init, 1.0);
        assert_eq!(c.fb_params.w, 20);
        assert_eq!(c.method, Method::Fedavg);
        assert_eq!(c, ExperimentConfig::new(10, 5));
    }

    #[test]
    fn cohort_larger_than_population_is_rejected() {
        let err = ExperimentConfig::from_json(r#"{"num_clients": 10, "cohort_size": 20}"#)
            .unwrap_err();
        assert_eq!(err.field(), Some("cohort_size"));
        assert!(err.to_string().contains("cohort_size exceeds num_clients"));
    }

    #[test]
    fn p_below_half_is_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"num_clients": 10, "cohort_size": 5, "fb_params": {"p": 0.3}}"#,
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("fb_params.p"));
        assert!(err.to_string().contains("p outside [0.5,1.0]"));
    }

    #[test]
    fn fedbalancer_requires_adaptive_deadline() {
        let err = ExperimentConfig::from_json(
            r#"{"num_clients": 10, "cohort_size": 5, "method": "fedbalancer", "deadline_policy": "fixed_1t"}"#,
        )
        .unwrap_err();
        assert_eq!(err.field(), Some("deadline_policy"));
    }

    #[test]
    fn enum_spellings() {
        let c = ExperimentConfig::from_json(
            r#"{"num_clients": 4, "cohort_size": 2, "method": "sample_selection_baseline",
                "deadline_policy": "fixed_2t", "client_selection": "stat_util"}"#,
        )
        .unwrap();
        assert_eq!(c.method, Method::SampleSelectionBaseline);
        assert_eq!(c.deadline_policy, DeadlinePolicy::Fixed2T);
        assert_eq!(c.client_selection, ClientSelection::StatUtil);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(
            r#"{"num_clients": 4, "cohort_size": 2, "cohort": 3}"#
        )
        .is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_config("/nonexistent/config.json").unwrap_err();
        assert!(matches!(err, ConfigError::Io { .. }));
    }

    #[test]
    fn serialized_config_parses_back_equal() {
        let mut c = ExperimentConfig::new(30, 7);
        c.method = Method::Fedbalancer;
        c.deadline_policy = DeadlinePolicy::AdaptiveDdlE;
        c.wallclock_budget_s = Some(1234.5);
        c.targets = vec![0.5, 0.75];
        c.label = Some("fb".into());
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
