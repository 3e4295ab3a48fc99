//! Embedding classifiers: a linear softmax head or a one-hidden-layer ReLU
//! perceptron, trained by plain minibatch SGD on cross-entropy with
//! hand-derived gradients, plus FedAvg and evaluation metrics.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{inverse_sampling_probs, GgeurLayer};
use crate::embedding::EmbeddingSet;
use crate::math;
use crate::matrix::Matrix;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Zero gives a linear softmax head.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self { input_dim, hidden_dim: 0, num_classes }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self { input_dim, hidden_dim, num_classes }
    }

    /// `(out, in)` of every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        if self.hidden_dim == 0 {
            vec![(self.num_classes, self.input_dim)]
        } else {
            vec![(self.hidden_dim, self.input_dim), (self.num_classes, self.hidden_dim)]
        }
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    arch: Architecture,
    layers: Vec<Dense>,
}

impl ClassifierParams {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Dense { weight: Matrix::zeros(o, i), bias: vec![0.0; o] })
            .collect();
        Self { arch, layers }
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = substream(seed, &[0x1417]);
        let mut p = Self::zeros(arch);
        for layer in &mut p.layers {
            let bound = 1.0 / math::sqrt(layer.weight.cols().max(1) as f64);
            for w in layer.weight.as_mut_slice().iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    /// Rebuilds parameters from the flat layout of [`Self::flatten`].
    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(Error::DimensionMismatch { expected: arch.num_params(), found: flat.len() });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut p = Self::zeros(arch);
        let mut it = flat.iter().copied();
        for layer in &mut p.layers {
            for w in layer.weight.as_mut_slice().iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap_or(0.0);
            }
        }
        Ok(p)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Layer by layer: weight (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.arch.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()))
    }

    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: f64, other: &ClassifierParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::new(&self.arch);
        self.forward(x, &mut scratch);
        scratch.logits
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn forward(&self, x: &[f64], s: &mut Scratch) {
        match self.layers.as_slice() {
            [out] => affine(out, x, &mut s.logits),
            [hidden, out] => {
                affine(hidden, x, &mut s.hidden);
                s.hidden.iter_mut().for_each(|h| *h = h.max(0.0));
                affine(out, &s.hidden, &mut s.logits);
            }
            _ => unreachable!("architecture has one or two layers"),
        }
    }

    /// Cross-entropy of one sample, accumulating `scale * ∂loss/∂θ` into `grad`.
    fn accumulate(&self, x: &[f64], label: usize, scale: f64, grad: &mut ClassifierParams, s: &mut Scratch) -> f64 {
        self.forward(x, s);
        let loss = softmax_in_place(&s.logits, &mut s.probs, label);
        s.probs[label] -= 1.0;
        let dz = &s.probs;
        match (self.layers.as_slice(), grad.layers.as_mut_slice()) {
            ([_], [g]) => outer_accumulate(g, scale, dz, x),
            ([_, out], [gh, go]) => {
                outer_accumulate(go, scale, dz, &s.hidden);
                for (j, dh) in s.dhidden.iter_mut().enumerate() {
                    *dh = if s.hidden[j] > 0.0 {
                        (0..dz.len()).map(|k| out.weight[(k, j)] * dz[k]).sum()
                    } else {
                        0.0
                    };
                }
                outer_accumulate(gh, scale, &s.dhidden, x);
            }
            _ => unreachable!("gradient shaped like params"),
        }
        loss
    }

    /// Mean cross-entropy and its gradient over a flattened batch.
    pub fn loss_and_gradient(&self, batch: &[f64], labels: &[usize]) -> Result<(f64, ClassifierParams)> {
        let dim = self.arch.input_dim;
        if batch.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * dim, found: batch.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.arch.num_classes) {
            return Err(Error::InvalidLabel { row: 0, label: bad, num_classes: self.arch.num_classes });
        }
        let mut grad = ClassifierParams::zeros(self.arch);
        let mut s = Scratch::new(&self.arch);
        let scale = 1.0 / labels.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, &y) in batch.chunks_exact(dim).zip(labels) {
            loss += self.accumulate(x, y, scale, &mut grad, &mut s);
        }
        Ok((loss * scale, grad))
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, batch: &[f64], labels: &[usize]) -> f64 {
        let mut s = Scratch::new(&self.arch);
        let dim = self.arch.input_dim;
        let total: f64 = batch
            .chunks_exact(dim)
            .zip(labels)
            .map(|(x, &y)| {
                self.forward(x, &mut s);
                softmax_in_place(&s.logits, &mut s.probs, y)
            })
            .sum();
        total / labels.len().max(1) as f64
    }
}

struct Scratch {
    hidden: Vec<f64>,
    dhidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Scratch {
    fn new(arch: &Architecture) -> Self {
        Self {
            hidden: vec![0.0; arch.hidden_dim],
            dhidden: vec![0.0; arch.hidden_dim],
            logits: vec![0.0; arch.num_classes],
            probs: vec![0.0; arch.num_classes],
        }
    }
}

fn affine(layer: &Dense, x: &[f64], out: &mut [f64]) {
    for (o, (row, b)) in out.iter_mut().zip((0..layer.weight.rows()).map(|r| layer.weight.row(r)).zip(&layer.bias)) {
        *o = b + math::dot(row, x);
    }
}

fn outer_accumulate(g: &mut Dense, scale: f64, dz: &[f64], x: &[f64]) {
    for (k, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let a = scale * d;
        for (w, &xi) in g.weight.row_mut(k).iter_mut().zip(x) {
            *w += a * xi;
        }
        g.bias[k] += a;
    }
}

/// Writes softmax(logits) into `probs`, returns `-log p[label]`.
fn softmax_in_place(logits: &[f64], probs: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = math::exp(z - max);
        sum += *p;
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    math::ln(sum) - (logits[label] - max)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Shuffle once per epoch and sweep in minibatches.
    #[default]
    Uniform,
    /// Draw each batch element's class with probability `∝ N_max / N_c`,
    /// then a row of that class uniformly.
    InverseFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sampler: Sampler,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, batch_size: 64, epochs: 30, seed: 0, sampler: Sampler::Uniform }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidSpec("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

const TAG_ORDER: u64 = 1;
const TAG_LAYER: u64 = 2;

/// Trains from `init`; see [`train_with_history`].
pub fn train(
    set: &EmbeddingSet,
    cfg: &TrainConfig,
    init: &ClassifierParams,
    layer: Option<&GgeurLayer>,
) -> Result<ClassifierParams> {
    train_with_history(set, cfg, init, layer).map(|(p, _)| p)
}

/// Minibatch SGD; returns the parameters and the mean minibatch loss of every
/// epoch. When `layer` is set, each assembled batch passes through it before
/// the forward pass. Zero epochs (or an empty set) return `init` unchanged.
pub fn train_with_history(
    set: &EmbeddingSet,
    cfg: &TrainConfig,
    init: &ClassifierParams,
    layer: Option<&GgeurLayer>,
) -> Result<(ClassifierParams, Vec<f64>)> {
    cfg.validate()?;
    let arch = init.arch;
    if set.dim() != arch.input_dim {
        return Err(Error::DimensionMismatch { expected: arch.input_dim, found: set.dim() });
    }
    if set.num_classes() > arch.num_classes {
        return Err(Error::DimensionMismatch { expected: arch.num_classes, found: set.num_classes() });
    }
    let mut params = init.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    if set.is_empty() || cfg.epochs == 0 {
        return Ok((params, history));
    }

    let n = set.len();
    let num_batches = n.div_ceil(cfg.batch_size);
    let inverse = match cfg.sampler {
        Sampler::Uniform => None,
        Sampler::InverseFrequency => Some(InverseSampler::new(set)?),
    };

    let dim = set.dim();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size * dim);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut grad = ClassifierParams::zeros(arch);
    let mut scratch = Scratch::new(&arch);
    for epoch in 0..cfg.epochs {
        let mut rng = substream(cfg.seed, &[TAG_ORDER, epoch as u64]);
        if inverse.is_none() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for b in 0..num_batches {
            batch.clear();
            labels.clear();
            match &inverse {
                None => {
                    for &i in &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(n)] {
                        batch.extend(set.row(i).iter().map(|&v| v as f64));
                        labels.push(set.label(i));
                    }
                }
                Some(sampler) => {
                    for _ in 0..cfg.batch_size {
                        let i = sampler.draw(&mut rng);
                        batch.extend(set.row(i).iter().map(|&v| v as f64));
                        labels.push(set.label(i));
                    }
                }
            }
            if let Some(layer) = layer {
                let mut lrng = substream(cfg.seed, &[TAG_LAYER, epoch as u64, b as u64]);
                layer.apply(&mut batch, &labels, &mut lrng)?;
            }

            grad.values_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / labels.len() as f64;
            let mut loss = 0.0;
            for (x, &y) in batch.chunks_exact(dim).zip(&labels) {
                loss += params.accumulate(x, y, scale, &mut grad, &mut scratch);
            }
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            params.axpy(-cfg.learning_rate, &grad);
            epoch_loss += loss;
        }
        history.push(epoch_loss / num_batches as f64);
    }
    Ok((params, history))
}

struct InverseSampler {
    rows: Vec<Vec<usize>>,
    dist: WeightedIndex<f64>,
}

impl InverseSampler {
    fn new(set: &EmbeddingSet) -> Result<Self> {
        let index = set.class_index();
        let classes: Vec<usize> = (0..index.len()).filter(|&c| !index[c].is_empty()).collect();
        let counts: Vec<usize> = classes.iter().map(|&c| index[c].len()).collect();
        let probs = inverse_sampling_probs(&counts)?;
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::InvalidSpec(alloc::format!("{e}")))?;
        let rows = classes.iter().map(|&c| index[c].clone()).collect();
        Ok(Self { rows, dist })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let k = self.dist.sample(rng);
        let rows = &self.rows[k];
        rows[rng.random_range(0..rows.len())]
    }
}

/// Mean cross-entropy over a whole set.
pub fn dataset_loss(params: &ClassifierParams, set: &EmbeddingSet) -> f64 {
    let data: Vec<f64> = set.data().iter().map(|&v| v as f64).collect();
    let labels: Vec<usize> = (0..set.len()).map(|i| set.label(i)).collect();
    params.loss(&data, &labels)
}

/// Weighted element-wise average of client parameters.
///
/// Clients are combined in a canonical order, so the result does not depend
/// on the order of `params`.
pub fn fedavg(params: &[ClassifierParams], weights: &[f64]) -> Result<ClassifierParams> {
    let first = params.first().ok_or_else(|| Error::InvalidSpec("no client parameters".into()))?;
    if params.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), found: weights.len() });
    }
    if params.iter().any(|p| p.arch != first.arch) {
        return Err(Error::ArchMismatch);
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidSpec("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidSpec("weights sum to zero".into()));
    }
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| {
        weights[a]
            .total_cmp(&weights[b])
            .then_with(|| params[a].values().map(|v| v.to_bits()).cmp(params[b].values().map(|v| v.to_bits())))
    });
    let mut out = ClassifierParams::zeros(first.arch);
    for &k in &order {
        out.axpy(weights[k] / total, &params[k]);
    }
    Ok(out)
}

/// Training-count thresholds of the head / middle / tail bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandThresholds {
    /// Head: more than this many training rows.
    pub head_above: usize,
    /// Tail: fewer than this many training rows.
    pub tail_below: usize,
}

impl Default for BandThresholds {
    fn default() -> Self {
        Self { head_above: 100, tail_below: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Head,
    Middle,
    Tail,
}

impl BandThresholds {
    pub fn band(&self, train_count: usize) -> Band {
        if train_count > self.head_above {
            Band::Head
        } else if train_count < self.tail_below {
            Band::Tail
        } else {
            Band::Middle
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    /// Top-1 accuracy in percent.
    pub top1_overall: f64,
    /// Per class; `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    /// Per domain; `None` for domains absent from the test set.
    pub per_domain: Vec<Option<f64>>,
    /// Population standard deviation of the present domains' accuracies.
    pub domain_std: f64,
    pub head: Option<f64>,
    pub middle: Option<f64>,
    pub tail: Option<f64>,
}

/// Accuracy breakdown of `params` on `test`. Bands need `train_counts`.
pub fn evaluate(
    params: &ClassifierParams,
    test: &EmbeddingSet,
    thresholds: &BandThresholds,
    train_counts: Option<&[usize]>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if test.dim() != params.arch.input_dim {
        return Err(Error::DimensionMismatch { expected: params.arch.input_dim, found: test.dim() });
    }
    let predictions: Vec<usize> = (0..test.len()).map(|i| params.predict(&test.row_f64(i))).collect();
    Ok(report_from_predictions(test, &predictions, thresholds, train_counts))
}

/// Builds an [`EvalReport`] from precomputed predictions.
pub fn report_from_predictions(
    test: &EmbeddingSet,
    predictions: &[usize],
    thresholds: &BandThresholds,
    train_counts: Option<&[usize]>,
) -> EvalReport {
    let pct = |(c, t): (usize, usize)| if t == 0 { None } else { Some(100.0 * c as f64 / t as f64) };
    let mut class_tally = vec![(0usize, 0usize); test.num_classes()];
    let mut domain_tally = vec![(0usize, 0usize); test.num_domains()];
    let mut band_tally = [(0usize, 0usize); 3];
    let mut correct = 0;
    for (i, &pred) in predictions.iter().enumerate() {
        let label = test.label(i);
        let hit = (pred == label) as usize;
        correct += hit;
        class_tally[label].0 += hit;
        class_tally[label].1 += 1;
        let d = test.domain(i);
        domain_tally[d].0 += hit;
        domain_tally[d].1 += 1;
        if let Some(counts) = train_counts {
            let band = thresholds.band(counts.get(label).copied().unwrap_or(0));
            let slot = match band {
                Band::Head => 0,
                Band::Middle => 1,
                Band::Tail => 2,
            };
            band_tally[slot].0 += hit;
            band_tally[slot].1 += 1;
        }
    }
    let per_domain: Vec<Option<f64>> = domain_tally.into_iter().map(pct).collect();
    let present: Vec<f64> = per_domain.iter().flatten().copied().collect();
    EvalReport {
        num_samples: predictions.len(),
        top1_overall: 100.0 * correct as f64 / predictions.len().max(1) as f64,
        per_class: class_tally.into_iter().map(pct).collect(),
        domain_std: math::population_std(&present),
        per_domain,
        head: pct(band_tally[0]),
        middle: pct(band_tally[1]),
        tail: pct(band_tally[2]),
    }
}
