//! Server-side logic: loss threshold, deadline choice, ratio control,
//! cohort selection and aggregation.

mod aggregate;
mod capability;
mod cohort;
mod controller;
mod deadline;
mod threshold;

pub use aggregate::{aggregate, aggregation_weights};
pub use capability::CapabilityTable;
pub use cohort::{random_cohort, select_cohort, stat_util};
pub use controller::{round_utility, update_controller, ControllerState, ControllerUpdate};
pub use deadline::{
    baseline_deadline, completion_estimate, ddl_e_curve, find_peak_ddl_e, full_data_time, select_deadline,
    train_time_estimate, ClientEstimate, DeadlineChoice,
};
pub use threshold::select_loss_threshold;
