use crate::error::ServerError;
use crate::model::WeightVector;
use crate::types::ClientReport;

/// `(client_id, n_k / Σn)` for each report, ordered by client id. With no
/// samples anywhere the weights are uniform.
pub fn aggregation_weights(reports: &[ClientReport]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, usize)> = reports.iter().map(|r| (r.client_id, r.num_samples)).collect();
    pairs.sort_unstable();
    let total: usize = pairs.iter().map(|p| p.1).sum();
    pairs
        .into_iter()
        .map(|(id, n)| {
            let w = if total == 0 {
                1.0 / reports.len() as f64
            } else {
                n as f64 / total as f64
            };
            (id, w)
        })
        .collect()
}

/// Sample-weighted average of the reported models. Reports are summed in
/// client-id order so the result does not depend on arrival order.
pub fn aggregate(reports: &[ClientReport]) -> Result<WeightVector, ServerError> {
    let first = reports.first().ok_or(ServerError::EmptyCohort)?;
    let mut sorted: Vec<&ClientReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.client_id);
    let weights = aggregation_weights(reports);
    let mut out = WeightVector::zeros(first.weights.layout());
    let acc = out.values_mut();
    for (r, (_, w)) in sorted.iter().zip(&weights) {
        for (a, v) in acc.iter_mut().zip(r.weights.values()) {
            *a += w * v;
        }
    }
    Ok(out)
}
