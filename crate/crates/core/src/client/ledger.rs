//! Per-client record of last-known sample losses.

/// Last observed loss of every local sample.
///
/// The ledger is filled once, either by a whole-dataset forward pass or by a
/// training round that touched every sample, and afterwards only entries of
/// trained samples change. Each entry carries a version counter that bumps on
/// every write.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLedger {
    losses: Vec<f64>,
    versions: Vec<u64>,
    initialized_round: Option<usize>,
}

impl LossLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fills every entry at once. Values are clamped to `[0, clamp]`.
    pub fn initialize(&mut self, losses: Vec<f64>, round: usize, clamp: f64) {
        self.versions = vec![1; losses.len()];
        self.losses = losses.into_iter().map(|l| clamp_loss(l, clamp)).collect();
        self.initialized_round = Some(round);
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized_round.is_some()
    }

    /// Round of the pass that filled the ledger.
    pub fn initialized_round(&self) -> Option<usize> {
        self.initialized_round
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn loss(&self, index: usize) -> f64 {
        self.losses[index]
    }

    pub fn version(&self, index: usize) -> u64 {
        self.versions[index]
    }

    /// Overwrites one entry. Panics if the ledger is not initialized.
    pub fn update(&mut self, index: usize, loss: f64, clamp: f64) {
        assert!(self.is_initialized(), "ledger update before initialization");
        self.losses[index] = clamp_loss(loss, clamp);
        self.versions[index] += 1;
    }
}

/// Clamps a loss into `[0, max]`; non-finite values map to `max`.
pub fn clamp_loss(loss: f64, max: f64) -> f64 {
    if loss.is_finite() {
        loss.clamp(0.0, max)
    } else {
        max
    }
}
