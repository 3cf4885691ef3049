use crate::error::ServerError;
use crate::stats::mean;

/// Loss threshold interpolated between the lowest reported low-loss marker
/// and the mean high-loss marker: `ll + (lh − ll)·ltr`.
///
/// When the mean high marker falls below the lowest low marker the
/// threshold is `ll`.
pub fn select_loss_threshold(llow: &[f64], lhigh: &[f64], ltr: f64) -> Result<f64, ServerError> {
    if llow.is_empty() || lhigh.is_empty() {
        return Err(ServerError::EmptyMetadata);
    }
    let ll = llow.iter().copied().fold(f64::INFINITY, f64::min);
    let lh = mean(lhigh);
    if lh < ll {
        return Ok(ll);
    }
    Ok(ll + (lh - ll) * ltr)
}
