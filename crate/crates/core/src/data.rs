//! Synthetic non-IID datasets and client latency traces.
//!
//! Client label mixes follow a Dirichlet prior over classes; features are
//! unit-covariance Gaussians around per-class means. Latency traces are
//! stored as seconds per transfer and seconds per training batch.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{LogNormalParams, SampleCountDist};
use crate::error::DataError;

/// Batch-latency samples a client collects before the first round.
pub const PRE_FL_LATENCY_SAMPLES: usize = 10;

/// A client's (or the server's) local samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle {
    input_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    owner: usize,
    sample_ids: Vec<usize>,
}

impl DatasetHandle {
    /// `features` is row-major `labels.len() × input_dim`. `sample_ids` are
    /// global identifiers, unique across the whole federation.
    pub fn new(
        input_dim: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        owner: usize,
        sample_ids: Vec<usize>,
    ) -> Self {
        assert_eq!(features.len(), labels.len() * input_dim, "feature matrix shape");
        assert_eq!(sample_ids.len(), labels.len(), "one id per sample");
        Self {
            input_dim,
            features,
            labels,
            owner,
            sample_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn sample_ids(&self) -> &[usize] {
        &self.sample_ids
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Class means of a synthetic Gaussian-mixture task.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    input_dim: usize,
    num_classes: usize,
    class_means: Vec<Vec<f64>>,
}

/// Separation used by [`gen_synthetic`].
pub const DEFAULT_CLASS_SEPARATION: f64 = 3.0;

impl SyntheticTask {
    /// Class means point in random directions, each with norm `separation`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        num_classes: usize,
        separation: f64,
        rng: &mut R,
    ) -> Result<Self, DataError> {
        if input_dim == 0 {
            return Err(degenerate("input_dim", "must be at least 1"));
        }
        if num_classes < 2 {
            return Err(degenerate("num_classes", "must be at least 2"));
        }
        let class_means = (0..num_classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..input_dim).map(|_| StandardNormal.sample(rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter_mut().for_each(|x| *x *= separation / norm);
                v
            })
            .collect();
        Ok(Self {
            input_dim,
            num_classes,
            class_means,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn push_sample<R: Rng + ?Sized>(&self, class: usize, features: &mut Vec<f64>, rng: &mut R) {
        for &m in &self.class_means[class] {
            let z: f64 = StandardNormal.sample(rng);
            features.push(m + z);
        }
    }

    /// One dataset per client. Sample ids are assigned consecutively from
    /// `first_id`, so client datasets never share an id.
    pub fn gen_clients<R: Rng + ?Sized>(
        &self,
        num_clients: usize,
        counts: &SampleCountDist,
        dirichlet_alpha: f64,
        noise_frac: f64,
        first_id: usize,
        rng: &mut R,
    ) -> Result<Vec<DatasetHandle>, DataError> {
        if !(dirichlet_alpha.is_finite() && dirichlet_alpha > 0.0) {
            return Err(degenerate("dirichlet_alpha", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&noise_frac) {
            return Err(degenerate("noise_frac", "must lie in [0, 1)"));
        }
        let c = self.num_classes;
        let mut next_id = first_id;
        let mut out = Vec::with_capacity(num_clients);
        for owner in 0..num_clients {
            let n = draw_count(counts, rng)?;
            let props = dirichlet(dirichlet_alpha, c, rng);
            let per_class = apportion(&props, n);
            let mut features = Vec::with_capacity(n * self.input_dim);
            let mut labels = Vec::with_capacity(n);
            for (class, &k) in per_class.iter().enumerate() {
                for _ in 0..k {
                    self.push_sample(class, &mut features, rng);
                    let label = if noise_frac > 0.0 && rng.random::<f64>() < noise_frac {
                        let other = rng.random_range(0..c - 1);
                        if other >= class {
                            other + 1
                        } else {
                            other
                        }
                    } else {
                        class
                    };
                    labels.push(label);
                }
            }
            let ids = (next_id..next_id + n).collect();
            next_id += n;
            out.push(DatasetHandle::new(self.input_dim, features, labels, owner, ids));
        }
        Ok(out)
    }

    /// Clean IID samples with uniformly drawn classes.
    pub fn gen_iid<R: Rng + ?Sized>(
        &self,
        n: usize,
        owner: usize,
        first_id: usize,
        rng: &mut R,
    ) -> DatasetHandle {
        let mut features = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = rng.random_range(0..self.num_classes);
            self.push_sample(class, &mut features, rng);
            labels.push(class);
        }
        DatasetHandle::new(self.input_dim, features, labels, owner, (first_id..first_id + n).collect())
    }
}

/// Non-IID client datasets on a fresh task with
/// [`DEFAULT_CLASS_SEPARATION`].
pub fn gen_synthetic<R: Rng + ?Sized>(
    num_clients: usize,
    counts: &SampleCountDist,
    input_dim: usize,
    num_classes: usize,
    dirichlet_alpha: f64,
    noise_frac: f64,
    rng: &mut R,
) -> Result<Vec<DatasetHandle>, DataError> {
    let task = SyntheticTask::new(input_dim, num_classes, DEFAULT_CLASS_SEPARATION, rng)?;
    task.gen_clients(num_clients, counts, dirichlet_alpha, noise_frac, 0, rng)
}

fn degenerate(param: &'static str, message: &str) -> DataError {
    DataError::Degenerate {
        param,
        message: message.to_string(),
    }
}

fn draw_count<R: Rng + ?Sized>(dist: &SampleCountDist, rng: &mut R) -> Result<usize, DataError> {
    match *dist {
        SampleCountDist::Fixed { count } if count >= 1 => Ok(count),
        SampleCountDist::Fixed { .. } => Err(degenerate("samples_per_client", "count must be at least 1")),
        SampleCountDist::Lognormal {
            median,
            sigma,
            min,
            max,
        } => {
            if !(median > 0.0 && sigma >= 0.0 && min >= 1 && min <= max) {
                return Err(degenerate(
                    "samples_per_client",
                    "need median > 0, sigma >= 0 and 1 <= min <= max",
                ));
            }
            let z: f64 = StandardNormal.sample(rng);
            let n = (median * (sigma * z).exp()).round();
            Ok((n as usize).clamp(min, max))
        }
    }
}

/// One draw from `Dirichlet(alpha, …, alpha)` over `k` classes.
///
/// Uses `Gamma(α) = Gamma(α+1) · U^{1/α}` in log space so that tiny
/// concentrations do not underflow to an all-zero vector.
pub fn dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("alpha + 1 > 0");
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

/// Largest-remainder apportionment of `n` items by `props`.
fn apportion(props: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// One client's latency trace in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: u64,
    pub download_s: Vec<f64>,
    pub upload_s: Vec<f64>,
    pub batch_latency_s: Vec<f64>,
}

impl TraceRecord {
    fn validate(&self, line: usize) -> Result<(), DataError> {
        for (field, list) in [
            ("download_s", &self.download_s),
            ("upload_s", &self.upload_s),
            ("batch_latency_s", &self.batch_latency_s),
        ] {
            if list.is_empty() {
                return Err(DataError::EmptyList {
                    line,
                    id: self.id,
                    field,
                });
            }
            if list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(DataError::NonPositive {
                    line,
                    id: self.id,
                    field,
                });
            }
        }
        Ok(())
    }
}

/// Latency traces for a set of clients, one record per client.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TraceFile {
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// JSON lines, one record per line.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(raw).map_err(|e| DataError::Parse {
                line,
                message: e.to_string(),
            })?;
            if !seen.insert(record.id) {
                return Err(DataError::DuplicateId { line, id: record.id });
            }
            record.validate(line)?;
            records.push(record);
        }
        Ok(Self { records })
    }
}

/// Reads and validates a JSON-lines trace file.
pub fn load_traces(path: impl AsRef<Path>) -> Result<TraceFile, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TraceFile::parse(&text)
}

/// Synthetic traces with heterogeneous compute speed.
///
/// Client mean batch latencies are `batch.median_s · spread^u` with `u`
/// spread evenly over `[0, 1]` after min-max rescaling, so the slowest
/// client is exactly `spread` times slower than the fastest. Every list is
/// lognormal jitter rescaled to hit its client's mean exactly.
pub fn gen_traces<R: Rng + ?Sized>(
    num_clients: usize,
    batch: LogNormalParams,
    network: LogNormalParams,
    heterogeneity_spread: f64,
    samples_per_client: usize,
    rng: &mut R,
) -> Result<TraceFile, DataError> {
    if !(heterogeneity_spread.is_finite() && heterogeneity_spread >= 1.0) {
        return Err(degenerate("heterogeneity_spread", "must be at least 1"));
    }
    if samples_per_client == 0 {
        return Err(degenerate("samples_per_client", "must be at least 1"));
    }
    for (param, p) in [("batch_latency", batch), ("network", network)] {
        if !(p.median_s > 0.0 && p.sigma >= 0.0) {
            return Err(degenerate(param, "need median_s > 0 and sigma >= 0"));
        }
    }
    let mut position: Vec<f64> = (0..num_clients).map(|_| rng.random::<f64>()).collect();
    let lo = position.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = position.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if num_clients >= 2 && hi > lo {
        position.iter_mut().for_each(|u| *u = (*u - lo) / (hi - lo));
    }
    let records = (0..num_clients)
        .map(|i| {
            let batch_mean = batch.median_s * heterogeneity_spread.powf(position[i]);
            let dl_mean = network.median_s * (network.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).exp();
            let ul_mean = network.median_s * (network.sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).exp();
            TraceRecord {
                id: i as u64,
                download_s: jittered(dl_mean, network.sigma, samples_per_client, rng),
                upload_s: jittered(ul_mean, network.sigma, samples_per_client, rng),
                batch_latency_s: jittered(batch_mean, batch.sigma, samples_per_client, rng),
            }
        })
        .collect();
    Ok(TraceFile { records })
}

fn jittered<R: Rng + ?Sized>(mean: f64, sigma: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| (sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).exp())
        .collect();
    let raw_mean = raw.iter().sum::<f64>() / n as f64;
    raw.iter().map(|r| r * mean / raw_mean).collect()
}
