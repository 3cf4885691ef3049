use rand::seq::index;
use rand::Rng;

/// Statistical utility `ot_len · sqrt(sq_sum / ot_len)`; zero with no
/// over-threshold samples. Negative inputs are treated as zero.
pub fn stat_util(ot_loss_sq_sum: f64, ot_len: f64) -> f64 {
    let sq = ot_loss_sq_sum.max(0.0);
    let n = ot_len.max(0.0);
    if n == 0.0 {
        return 0.0;
    }
    n * (sq / n).sqrt()
}

/// `k` distinct clients drawn uniformly, ascending.
pub fn random_cohort<R: Rng + ?Sized>(num_clients: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut c = index::sample(rng, num_clients, k.min(num_clients)).into_vec();
    c.sort_unstable();
    c
}

/// Utility-ranked cohort with random exploration.
///
/// `round(epsilon·k)` slots go to clients drawn uniformly from those not
/// ranked in; the rest go to the highest utilities, ties to the lower id.
/// Clients without a utility yet (`None`) rank above every known one.
pub fn select_cohort<R: Rng + ?Sized>(
    utilities: &[Option<f64>],
    k: usize,
    epsilon: f64,
    rng: &mut R,
) -> Vec<usize> {
    let n = utilities.len();
    let k = k.min(n);
    let explore = ((epsilon * k as f64).round() as usize).min(k);
    let exploit = k - explore;
    let key = |i: usize| utilities[i].unwrap_or(f64::INFINITY);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut cohort: Vec<usize> = order[..exploit].to_vec();
    let rest = &order[exploit..];
    cohort.extend(index::sample(rng, rest.len(), explore).into_iter().map(|j| rest[j]));
    cohort.sort_unstable();
    cohort
}
