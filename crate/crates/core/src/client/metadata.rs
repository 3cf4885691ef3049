//! Loss statistics a client reports, with Gaussian noise for privacy.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::FbParams;
use crate::stats::percentile;

/// Low/high loss markers plus over-threshold statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metadata {
    pub llow: f64,
    pub lhigh: f64,
    pub ot_loss_sq_sum: f64,
    pub ot_len: f64,
}

/// Noise-free statistics: minimum and 80th-percentile loss over the whole
/// ledger, sum of squared over-threshold losses and their count.
pub fn exact_metadata(all_losses: &[f64], ot_losses: &[f64]) -> Metadata {
    let (llow, lhigh) = if all_losses.is_empty() {
        (0.0, 0.0)
    } else {
        (
            percentile(all_losses, FbParams::LLOW_PERCENTILE),
            percentile(all_losses, FbParams::LHIGH_PERCENTILE),
        )
    };
    Metadata {
        llow,
        lhigh,
        ot_loss_sq_sum: ot_losses.iter().map(|l| l * l).sum(),
        ot_len: ot_losses.len() as f64,
    }
}

/// Exact statistics plus independent `N(0, noise_factor²)` noise on each
/// field, clamped at zero. A zero noise factor returns the exact values.
pub fn build_metadata<R: Rng + ?Sized>(
    all_losses: &[f64],
    ot_losses: &[f64],
    noise_factor: f64,
    rng: &mut R,
) -> Metadata {
    let exact = exact_metadata(all_losses, ot_losses);
    if noise_factor == 0.0 {
        return exact;
    }
    let normal = Normal::new(0.0, noise_factor).expect("noise factor is finite and non-negative");
    let mut noised = |v: f64| (v + normal.sample(rng)).max(0.0);
    Metadata {
        llow: noised(exact.llow),
        lhigh: noised(exact.lhigh),
        ot_loss_sq_sum: noised(exact.ot_loss_sq_sum),
        ot_len: noised(exact.ot_len),
    }
}
