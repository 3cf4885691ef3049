use serde::Serialize;

use crate::config::FbParams;

/// Adaptive ratios plus the per-round utility history they are driven by.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControllerState {
    pub ltr: f64,
    pub ddlr: f64,
    pub history: Vec<f64>,
}

/// What a window comparison did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ControllerUpdate {
    pub older_sum: f64,
    pub newer_sum: f64,
    /// True when the newer window scored lower, which pushes the loss
    /// threshold up and the deadline down.
    pub utility_dropped: bool,
    pub ltr: f64,
    pub ddlr: f64,
}

/// Round utility `lsum / (l · ddl)`, zero when nothing was selected.
pub fn round_utility(lsum: f64, l: usize, ddl: f64) -> f64 {
    if l == 0 {
        0.0
    } else {
        lsum / (l as f64 * ddl)
    }
}

impl ControllerState {
    pub fn new(params: &FbParams) -> Self {
        Self {
            ltr: params.ltr_init,
            ddlr: params.ddlr_init,
            history: Vec::new(),
        }
    }

    /// Appends this round's utility and, every `w` rounds once two full
    /// windows exist, compares the last window against the one before it.
    pub fn update(&mut self, round: usize, u_r: f64, params: &FbParams) -> Option<ControllerUpdate> {
        self.history.push(u_r);
        let w = params.w;
        let len = self.history.len();
        if w == 0 || !round.is_multiple_of(w) || round < 2 * w || len < 2 * w {
            return None;
        }
        let older_sum: f64 = self.history[len - 2 * w..len - w].iter().sum();
        let newer_sum: f64 = self.history[len - w..].iter().sum();
        let utility_dropped = older_sum > newer_sum;
        if utility_dropped {
            self.ltr = (self.ltr + params.lss).min(1.0);
            self.ddlr = (self.ddlr - params.dss).max(0.0);
        } else {
            self.ltr = (self.ltr - params.lss).max(0.0);
            self.ddlr = (self.ddlr + params.dss).min(1.0);
        }
        Some(ControllerUpdate {
            older_sum,
            newer_sum,
            utility_dropped,
            ltr: self.ltr,
            ddlr: self.ddlr,
        })
    }
}

/// Functional form of [`ControllerState::update`] taking the raw round
/// totals.
pub fn update_controller(
    state: &mut ControllerState,
    round: usize,
    lsum: f64,
    l: usize,
    ddl: f64,
    params: &FbParams,
) -> Option<ControllerUpdate> {
    state.update(round, round_utility(lsum, l, ddl), params)
}
