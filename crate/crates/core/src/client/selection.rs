//! Loss-threshold sample selection.

use rand::seq::index;
use rand::Rng;

use super::ledger::LossLedger;

/// Outcome of one selection pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    /// Over-threshold picks first, then under-threshold picks.
    pub selected_indices: Vec<usize>,
    /// Samples whose loss is at least the threshold, ascending.
    pub ot_indices: Vec<usize>,
    /// The remaining samples, ascending.
    pub ut_indices: Vec<usize>,
    /// Number of samples to select.
    pub l: usize,
    /// Trainable sample budget under the deadline.
    pub s: usize,
    pub used_full_dataset: bool,
}

/// Samples a client can train for `epochs` epochs before `deadline`, after
/// setting aside the mean download and upload time:
/// `floor((deadline − dl − ul) / (epochs · batch_latency)) · batch_size`.
///
/// An infinite deadline yields `usize::MAX`.
pub fn max_trainable_size(
    mean_batch_latency: f64,
    deadline: f64,
    epochs: usize,
    batch_size: usize,
    mean_download: f64,
    mean_upload: f64,
) -> usize {
    if deadline == f64::INFINITY {
        return usize::MAX;
    }
    let budget = deadline - mean_download - mean_upload;
    if budget.is_nan() || budget <= 0.0 || epochs == 0 {
        return 0;
    }
    let batches = (budget / (epochs as f64 * mean_batch_latency)).floor();
    if batches >= usize::MAX as f64 / batch_size.max(1) as f64 {
        return usize::MAX;
    }
    (batches as usize).saturating_mul(batch_size)
}

/// Splits indices into over-threshold (`loss ≥ lt`) and under-threshold.
pub fn split_by_threshold(losses: &[f64], lt: f64) -> (Vec<usize>, Vec<usize>) {
    (0..losses.len()).partition(|&i| losses[i] >= lt)
}

fn sample_from<R: Rng + ?Sized>(pool: &[usize], amount: usize, rng: &mut R) -> Vec<usize> {
    let amount = amount.min(pool.len());
    index::sample(rng, pool.len(), amount)
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

/// Draws `l` samples: `round(l·p)` from the over-threshold group and the
/// rest from the under-threshold group. A shortfall in either group is made
/// up from the other, so exactly `min(l, |D|)` samples come back.
fn draw<R: Rng + ?Sized>(ot: &[usize], ut: &[usize], l: usize, p: f64, rng: &mut R) -> Vec<usize> {
    let l = l.min(ot.len() + ut.len());
    let want_ot = ((l as f64 * p).round() as usize).min(l);
    let from_ut = (l - want_ot.min(ot.len())).min(ut.len());
    let from_ot = l - from_ut;
    let mut picked = sample_from(ot, from_ot, rng);
    picked.extend(sample_from(ut, from_ut, rng));
    picked
}

/// Picks the training samples for one round.
///
/// With a budget `s` covering the whole dataset every sample is used.
/// Otherwise `L = max(s, |OT|)` samples are drawn with share `p` from the
/// over-threshold group.
pub fn select_samples<R: Rng + ?Sized>(
    ledger: &LossLedger,
    lt: f64,
    s: usize,
    p: f64,
    rng: &mut R,
) -> SelectionResult {
    assert!(ledger.is_initialized(), "selection needs an initialized ledger");
    let n = ledger.len();
    let (ot, ut) = split_by_threshold(ledger.losses(), lt);
    if s >= n {
        return SelectionResult {
            selected_indices: (0..n).collect(),
            ot_indices: ot,
            ut_indices: ut,
            l: n,
            s,
            used_full_dataset: true,
        };
    }
    let l = s.max(ot.len());
    let selected = draw(&ot, &ut, l, p, rng);
    SelectionResult {
        selected_indices: selected,
        ot_indices: ot,
        ut_indices: ut,
        l,
        s,
        used_full_dataset: false,
    }
}

/// Selection with the sample count fixed to `l` (one batch per local epoch).
pub fn select_fixed_count<R: Rng + ?Sized>(
    ledger: &LossLedger,
    lt: f64,
    l: usize,
    p: f64,
    rng: &mut R,
) -> SelectionResult {
    assert!(ledger.is_initialized(), "selection needs an initialized ledger");
    let n = ledger.len();
    let (ot, ut) = split_by_threshold(ledger.losses(), lt);
    let selected = draw(&ot, &ut, l, p, rng);
    SelectionResult {
        used_full_dataset: l >= n,
        selected_indices: selected,
        ot_indices: ot,
        ut_indices: ut,
        l: l.min(n),
        s: l,
    }
}

/// The `s` highest-loss samples, ties broken by lower index.
pub fn select_top_loss(ledger: &LossLedger, s: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ledger.len()).collect();
    order.sort_by(|&a, &b| ledger.loss(b).total_cmp(&ledger.loss(a)).then(a.cmp(&b)));
    order.truncate(s);
    order
}
