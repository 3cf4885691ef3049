//! Federated-learning simulator with loss-threshold sample selection and
//! adaptive deadline control.
//!
//! The crate is organized the way a round flows through the system:
//!
//! * [`config`] and [`rng`] hold the experiment description and the
//!   deterministic random streams every other module draws from.
//! * [`data`] generates non-IID client datasets and latency traces.
//! * [`model`] is a small differentiable classifier with per-sample losses.
//! * [`client`] runs one client's round: sample selection, local training,
//!   loss-ledger upkeep and noised metadata.
//! * [`server`] plans rounds: loss threshold, deadline, cohort, aggregation.
//! * [`sim`] drives rounds against a simulated clock.
//! * [`report`] turns round records into time-to-accuracy comparisons.

pub mod client;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod report;
pub mod rng;
pub mod server;
pub mod sim;
pub mod stats;
pub mod types;

pub use config::{load_config, ClientSelection, DeadlinePolicy, ExperimentConfig, FbParams, Method};
pub use error::{ConfigError, DataError, ModelError, ReportError, ServerError, SimError};
pub use model::{Layout, WeightVector};
pub use rng::{seeded_rng, RandomStream};
pub use sim::{run_experiment, ExperimentOutcome, RoundRecord};
pub use types::{ClientProfile, ClientReport, RoundPlan};
