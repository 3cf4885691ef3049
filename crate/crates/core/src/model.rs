//! Small differentiable classifiers.
//!
//! Two architectures share one flat parameter vector:
//!
//! * softmax regression (`hidden_dim == 0`): `W (d×c) | b (c)`
//! * one tanh hidden layer: `W1 (d×h) | b1 (h) | W2 (h×c) | b2 (c)`
//!
//! Matrices are row-major with the input index outermost. Losses are
//! cross-entropy computed through a shifted log-sum-exp.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetHandle;
use crate::error::ModelError;

/// Architecture descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub input_dim: usize,
    /// 0 selects softmax regression.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        if h == 0 {
            d * c + c
        } else {
            d * h + h + h * c + c
        }
    }

    /// Number of entries belonging to input-layer weight matrices (bias
    /// rows excluded). They form the prefix of the parameter vector.
    pub fn input_weight_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.num_classes
        } else {
            self.input_dim * self.hidden_dim
        }
    }
}

/// Flat model parameters tagged with their layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    layout: Layout,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.num_params()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != layout.num_params() {
            return Err(ModelError::LayoutMismatch {
                expected: layout.num_params(),
                actual: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &WeightVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Class scores for one feature row.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::new(self.layout);
        self.forward(x, &mut scratch);
        scratch.logits
    }

    fn forward(&self, x: &[f64], s: &mut Scratch) {
        let Layout {
            input_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = self.layout;
        let w = &self.values;
        if h == 0 {
            s.logits.copy_from_slice(&w[d * c..d * c + c]);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w[i * c..(i + 1) * c];
                for (z, wk) in s.logits.iter_mut().zip(row) {
                    *z += xi * wk;
                }
            }
        } else {
            let (w1, rest) = w.split_at(d * h);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(h * c);
            s.hidden.copy_from_slice(b1);
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w1[i * h..(i + 1) * h];
                for (a, wj) in s.hidden.iter_mut().zip(row) {
                    *a += xi * wj;
                }
            }
            for a in s.hidden.iter_mut() {
                *a = a.tanh();
            }
            s.logits.copy_from_slice(b2);
            for (j, &hj) in s.hidden.iter().enumerate() {
                let row = &w2[j * c..(j + 1) * c];
                for (z, wk) in s.logits.iter_mut().zip(row) {
                    *z += hj * wk;
                }
            }
        }
    }

    /// Cross-entropy of one sample; leaves softmax probabilities in
    /// `s.probs`.
    fn loss_with_probs(&self, x: &[f64], y: usize, s: &mut Scratch) -> f64 {
        self.forward(x, s);
        let max = s.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &z) in s.probs.iter_mut().zip(&s.logits) {
            *p = (z - max).exp();
            sum += *p;
        }
        for p in s.probs.iter_mut() {
            *p /= sum;
        }
        sum.ln() + max - s.logits[y]
    }

    /// Adds `scale · ∂loss/∂w` for one sample into `grad`; returns the loss.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        y: usize,
        s: &mut Scratch,
        grad: &mut [f64],
        scale: f64,
    ) -> f64 {
        let loss = self.loss_with_probs(x, y, s);
        let Layout {
            input_dim: d,
            hidden_dim: h,
            num_classes: c,
        } = self.layout;
        // dL/dz = p - onehot(y)
        for (k, p) in s.probs.iter().enumerate() {
            s.dlogits[k] = scale * (p - if k == y { 1.0 } else { 0.0 });
        }
        if h == 0 {
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut grad[i * c..(i + 1) * c];
                for (g, dz) in row.iter_mut().zip(&s.dlogits) {
                    *g += xi * dz;
                }
            }
            for (g, dz) in grad[d * c..].iter_mut().zip(&s.dlogits) {
                *g += dz;
            }
        } else {
            let w2 = &self.values[d * h + h..d * h + h + h * c];
            let (gw1, rest) = grad.split_at_mut(d * h);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(h * c);
            for j in 0..h {
                let hj = s.hidden[j];
                let w2row = &w2[j * c..(j + 1) * c];
                let g2row = &mut gw2[j * c..(j + 1) * c];
                let mut back = 0.0;
                for k in 0..c {
                    g2row[k] += hj * s.dlogits[k];
                    back += w2row[k] * s.dlogits[k];
                }
                s.dhidden[j] = back * (1.0 - hj * hj);
            }
            for (g, dz) in gb2.iter_mut().zip(&s.dlogits) {
                *g += dz;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut gw1[i * h..(i + 1) * h];
                for (g, da) in row.iter_mut().zip(&s.dhidden) {
                    *g += xi * da;
                }
            }
            for (g, da) in gb1.iter_mut().zip(&s.dhidden) {
                *g += da;
            }
        }
        loss
    }
}

struct Scratch {
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    dlogits: Vec<f64>,
}

impl Scratch {
    fn new(layout: Layout) -> Self {
        Self {
            hidden: vec![0.0; layout.hidden_dim],
            dhidden: vec![0.0; layout.hidden_dim],
            logits: vec![0.0; layout.num_classes],
            probs: vec![0.0; layout.num_classes],
            dlogits: vec![0.0; layout.num_classes],
        }
    }
}

/// Result of one client's local training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub updated_weights: WeightVector,
    /// Cross-entropy of each trained sample at its last forward pass,
    /// measured before that batch's update.
    pub per_sample_losses: BTreeMap<usize, f64>,
    pub epochs_completed: usize,
}

/// Draws every parameter from `U(-1/√fan_in, 1/√fan_in)`, biases included.
pub fn init_model<R: Rng + ?Sized>(layout: Layout, rng: &mut R) -> WeightVector {
    let mut w = WeightVector::zeros(layout);
    let Layout {
        input_dim: d,
        hidden_dim: h,
        num_classes: c,
    } = layout;
    let (first, second) = if h == 0 {
        (d * c + c, 0)
    } else {
        (d * h + h, h * c + c)
    };
    let b1 = 1.0 / (d as f64).sqrt();
    for v in &mut w.values[..first] {
        *v = rng.random_range(-b1..=b1);
    }
    if second > 0 {
        let b2 = 1.0 / (h as f64).sqrt();
        for v in &mut w.values[first..] {
            *v = rng.random_range(-b2..=b2);
        }
    }
    w
}

fn check_index(dataset: &DatasetHandle, index: usize) -> Result<(), ModelError> {
    if index >= dataset.len() {
        return Err(ModelError::IndexOutOfRange {
            index,
            len: dataset.len(),
        });
    }
    Ok(())
}

/// Cross-entropy of a single sample.
pub fn sample_loss(weights: &WeightVector, x: &[f64], y: usize) -> f64 {
    let mut s = Scratch::new(weights.layout);
    weights.loss_with_probs(x, y, &mut s)
}

/// Loss and full parameter gradient of a single sample.
pub fn loss_and_gradient(weights: &WeightVector, x: &[f64], y: usize) -> (f64, Vec<f64>) {
    let mut s = Scratch::new(weights.layout);
    let mut grad = vec![0.0; weights.len()];
    let loss = weights.accumulate_gradient(x, y, &mut s, &mut grad, 1.0);
    (loss, grad)
}

/// Per-sample cross-entropy under `weights`, without touching them.
pub fn forward_losses(
    weights: &WeightVector,
    dataset: &DatasetHandle,
    indices: &[usize],
) -> Result<BTreeMap<usize, f64>, ModelError> {
    let mut s = Scratch::new(weights.layout);
    let mut out = BTreeMap::new();
    for &i in indices {
        check_index(dataset, i)?;
        let loss = weights.loss_with_probs(dataset.features(i), dataset.label(i), &mut s);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { index: i });
        }
        out.insert(i, loss);
    }
    Ok(out)
}

/// Mini-batch SGD from `weights_global` over `selected_indices`.
///
/// Each epoch shuffles the selection with `rng`. The per-sample objective is
/// cross-entropy plus `(mu/2)·‖w − weights_global‖²`.
#[allow(clippy::too_many_arguments)]
pub fn train_local<R: Rng + ?Sized>(
    weights_global: &WeightVector,
    dataset: &DatasetHandle,
    selected_indices: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    mu: f64,
    rng: &mut R,
) -> Result<TrainOutcome, ModelError> {
    train_from(
        weights_global,
        weights_global,
        dataset,
        selected_indices,
        epochs,
        batch_size,
        lr,
        mu,
        rng,
    )
}

/// As [`train_local`], starting at `start` while the proximal term stays
/// anchored at `anchor`. Losses recorded for a sample are overwritten by
/// later epochs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_from<R: Rng + ?Sized>(
    start: &WeightVector,
    anchor: &WeightVector,
    dataset: &DatasetHandle,
    selected_indices: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    mu: f64,
    rng: &mut R,
) -> Result<TrainOutcome, ModelError> {
    if selected_indices.is_empty() {
        return Err(ModelError::EmptySelection);
    }
    for &i in selected_indices {
        check_index(dataset, i)?;
    }
    let batch_size = batch_size.max(1);
    let mut w = start.clone();
    let mut s = Scratch::new(w.layout);
    let mut grad = vec![0.0; w.len()];
    let mut losses = BTreeMap::new();
    let mut order = selected_indices.to_vec();

    for epoch in 1..=epochs {
        order.copy_from_slice(selected_indices);
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let loss =
                    w.accumulate_gradient(dataset.features(i), dataset.label(i), &mut s, &mut grad, scale);
                losses.insert(i, loss);
            }
            if mu != 0.0 {
                for ((g, wv), av) in grad.iter_mut().zip(&w.values).zip(&anchor.values) {
                    *g += mu * (wv - av);
                }
            }
            for (wv, g) in w.values.iter_mut().zip(&grad) {
                *wv -= lr * g;
            }
        }
        if !w.is_finite() || losses.values().any(|l| !l.is_finite()) {
            return Err(ModelError::Diverged { epoch });
        }
    }
    Ok(TrainOutcome {
        updated_weights: w,
        per_sample_losses: losses,
        epochs_completed: epochs,
    })
}

/// Largest relative difference between the analytic gradient of one sample
/// and central finite differences with step `1e-5`. Components are compared
/// as `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(
    weights: &WeightVector,
    dataset: &DatasetHandle,
    index: usize,
) -> Result<f64, ModelError> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    check_index(dataset, index)?;
    let x = dataset.features(index);
    let y = dataset.label(index);
    let (_, analytic) = loss_and_gradient(weights, x, y);
    let mut probe = weights.clone();
    let mut worst: f64 = 0.0;
    for (p, &a) in analytic.iter().enumerate() {
        let orig = probe.values[p];
        probe.values[p] = orig + H;
        let plus = sample_loss(&probe, x, y);
        probe.values[p] = orig - H;
        let minus = sample_loss(&probe, x, y);
        probe.values[p] = orig;
        let numeric = (plus - minus) / (2.0 * H);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Index of the largest logit, ties to the lowest class.
pub fn predict(weights: &WeightVector, x: &[f64]) -> usize {
    let logits = weights.logits(x);
    let mut best = 0;
    for (k, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = k;
        }
    }
    best
}

/// Share of correctly classified samples; 0 for an empty dataset.
pub fn accuracy(weights: &WeightVector, dataset: &DatasetHandle) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let mut s = Scratch::new(weights.layout);
    let correct = (0..dataset.len())
        .filter(|&i| {
            weights.forward(dataset.features(i), &mut s);
            let mut best = 0;
            for k in 1..s.logits.len() {
                if s.logits[k] > s.logits[best] {
                    best = k;
                }
            }
            best == dataset.label(i)
        })
        .count();
    correct as f64 / dataset.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_dataset(n: usize, layout: Layout, seed: u64) -> DatasetHandle {
        let mut rng = seeded_rng(seed, 99);
        let features: Vec<f64> = (0..n * layout.input_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let labels = (0..n)
            .map(|_| rng.random_range(0..layout.num_classes))
            .collect();
        DatasetHandle::new(layout.input_dim, features, labels, 0, (0..n).collect())
    }

    #[test]
    fn parameter_counts() {
        let mut rng = seeded_rng(3, 0);
        assert_eq!(init_model(Layout::new(4, 0, 3), &mut rng).len(), 4 * 3 + 3);
        assert_eq!(init_model(Layout::new(2, 3, 2), &mut rng).len(), 2 * 3 + 3 + 3 * 2 + 2);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let layout = Layout::new(16, 8, 4);
        let a = init_model(layout, &mut seeded_rng(7, 1));
        let b = init_model(layout, &mut seeded_rng(7, 1));
        assert_eq!(a, b);
        let first = 16 * 8 + 8;
        assert!(a.values()[..first].iter().all(|v| v.abs() <= 0.25));
        assert!(a.values()[first..].iter().all(|v| v.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn zero_weights_give_log_c() {
        let layout = Layout::new(5, 0, 7);
        let data = random_dataset(4, layout, 1);
        let losses = forward_losses(&WeightVector::zeros(layout), &data, &[0, 1, 2, 3]).unwrap();
        for l in losses.values() {
            assert!((l - 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_indices_give_empty_map() {
        let layout = Layout::new(3, 0, 2);
        let data = random_dataset(2, layout, 1);
        assert!(forward_losses(&WeightVector::zeros(layout), &data, &[]).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_index_is_reported() {
        let layout = Layout::new(3, 0, 2);
        let data = random_dataset(2, layout, 1);
        let err = forward_losses(&WeightVector::zeros(layout), &data, &[5]).unwrap_err();
        assert_eq!(err, ModelError::IndexOutOfRange { index: 5, len: 2 });
    }

    #[test]
    fn non_finite_loss_names_index() {
        let layout = Layout::new(2, 0, 2);
        let data = DatasetHandle::new(2, vec![1.0, 0.0, f64::NAN, 1.0], vec![0, 1], 0, vec![0, 1]);
        let mut rng = seeded_rng(1, 1);
        let w = init_model(layout, &mut rng);
        let err = forward_losses(&w, &data, &[0, 1]).unwrap_err();
        assert_eq!(err, ModelError::NonFiniteLoss { index: 1 });
    }

    #[test]
    fn overfitting_one_sample_drives_loss_to_zero() {
        for hidden in [0, 6] {
            let layout = Layout::new(8, hidden, 4);
            let data = random_dataset(1, layout, 11);
            let mut rng = seeded_rng(2, 0);
            let w0 = init_model(layout, &mut rng);
            let out = train_local(&w0, &data, &[0], 500, 1, 0.5, 0.0, &mut rng).unwrap();
            let loss = forward_losses(&out.updated_weights, &data, &[0]).unwrap()[&0];
            assert!(loss < 1e-3, "hidden={hidden} loss={loss}");
        }
    }

    #[test]
    fn coverage_of_recorded_losses() {
        let layout = Layout::new(4, 0, 3);
        let data = random_dataset(8, layout, 5);
        let mut rng = seeded_rng(2, 0);
        let w0 = init_model(layout, &mut rng);
        let sel = [0, 2, 3, 5, 7];
        let out = train_local(&w0, &data, &sel, 2, 10, 0.1, 0.0, &mut rng).unwrap();
        assert_eq!(out.per_sample_losses.keys().copied().collect::<Vec<_>>(), sel);
        assert_eq!(out.epochs_completed, 2);
        assert!(out.per_sample_losses.values().all(|&l| l >= 0.0));
    }

    #[test]
    fn recorded_loss_is_pre_update_loss_of_last_epoch() {
        // One sample, one batch per epoch: the recorded loss must equal the
        // loss under the weights entering the final epoch.
        let layout = Layout::new(4, 0, 3);
        let data = random_dataset(1, layout, 5);
        let w0 = init_model(layout, &mut seeded_rng(4, 0));
        let two = train_local(&w0, &data, &[0], 2, 4, 0.3, 0.0, &mut seeded_rng(9, 0)).unwrap();
        let one = train_local(&w0, &data, &[0], 1, 4, 0.3, 0.0, &mut seeded_rng(9, 0)).unwrap();
        let expected = forward_losses(&one.updated_weights, &data, &[0]).unwrap()[&0];
        assert_eq!(two.per_sample_losses[&0], expected);
    }

    #[test]
    fn large_mu_keeps_weights_near_global() {
        let layout = Layout::new(6, 0, 3);
        let data = random_dataset(10, layout, 8);
        let w0 = init_model(layout, &mut seeded_rng(1, 0));
        let idx: Vec<usize> = (0..10).collect();
        let run = |mu: f64, batch: usize| {
            train_local(&w0, &data, &idx, 1, batch, 1e-6, mu, &mut seeded_rng(5, 0))
                .unwrap()
                .updated_weights
                .distance(&w0)
        };
        // A single step starts at the anchor, where the proximal gradient is zero.
        assert_eq!(run(1e6, 10), run(0.0, 10));
        // Five steps: the proximal term pulls every later step back.
        assert!(run(1e6, 2) < run(0.0, 2));
    }

    #[test]
    fn divergence_names_epoch() {
        let layout = Layout::new(3, 0, 2);
        let data = DatasetHandle::new(3, vec![1e200, 1e200, 1e200], vec![1], 0, vec![0]);
        let w0 = WeightVector::zeros(layout);
        let err = train_local(&w0, &data, &[0], 3, 1, 1e200, 0.0, &mut seeded_rng(1, 1)).unwrap_err();
        assert!(matches!(err, ModelError::Diverged { epoch: 1 } | ModelError::Diverged { epoch: 2 }));
    }

    #[test]
    fn empty_selection_is_an_error() {
        let layout = Layout::new(3, 0, 2);
        let data = random_dataset(2, layout, 1);
        let err = train_local(&WeightVector::zeros(layout), &data, &[], 1, 1, 0.1, 0.0, &mut seeded_rng(1, 1))
            .unwrap_err();
        assert_eq!(err, ModelError::EmptySelection);
    }

    #[test]
    fn gradient_check_passes_both_architectures() {
        for hidden in [0, 5] {
            let layout = Layout::new(7, hidden, 4);
            let data = random_dataset(3, layout, 21);
            let w = init_model(layout, &mut seeded_rng(13, hidden as u64));
            for i in 0..3 {
                let err = gradient_check(&w, &data, i).unwrap();
                assert!(err < 1e-4, "hidden={hidden} err={err}");
            }
        }
    }

    #[test]
    fn zero_input_has_zero_input_layer_gradient() {
        for hidden in [0, 4] {
            let layout = Layout::new(5, hidden, 3);
            let w = init_model(layout, &mut seeded_rng(3, 3));
            let (_, grad) = loss_and_gradient(&w, &[0.0; 5], 2);
            assert!(grad[..layout.input_weight_count()].iter().all(|&g| g == 0.0));
            assert!(grad[layout.input_weight_count()..].iter().any(|&g| g != 0.0));
        }
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let layout = Layout::new(2, 0, 2);
        // logits = x, so the larger coordinate wins.
        let w = WeightVector::from_values(layout, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let data = DatasetHandle::new(2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0], vec![0, 1, 1], 0, vec![0, 1, 2]);
        assert!((accuracy(&w, &data) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(predict(&w, &[0.0, 3.0]), 1);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let err = WeightVector::from_values(Layout::new(2, 0, 2), vec![0.0; 5]).unwrap_err();
        assert_eq!(err, ModelError::LayoutMismatch { expected: 6, actual: 5 });
    }
}
