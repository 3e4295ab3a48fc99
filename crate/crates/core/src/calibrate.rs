//! Tail-class calibration from an external knowledge base.
//!
//! Each under-represented class is matched, by prototype cosine, to the most
//! similar class of a sample-rich knowledge base; the donor's shape then
//! drives either offline sample generation ([`calibrate_tail`]) or an
//! in-training perturbation layer ([`GgeurLayer`]).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{BankEntry, ShapeBank};
use crate::augment::{add_perturbation, augment_class, ScaleMode};
use crate::embedding::{EmbeddingSet, RowOrigin};
use crate::geometry::{per_class_geometry, shape_similarity, size_of_shape, ClassStats, CovarianceMode, GeometricShape};
use crate::math;
use crate::rng::substream;
use crate::{Error, Result};

/// Per-class prototypes and shapes of an external embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    bank: ShapeBank,
}

impl KnowledgeBase {
    /// Wraps a bank; every prototype must be nonzero.
    pub fn from_bank(bank: ShapeBank) -> Result<Self> {
        if bank.entries().iter().any(|e| math::norm(&e.mean) == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(Self { bank })
    }

    pub fn bank(&self) -> &ShapeBank {
        &self.bank
    }

    pub fn into_bank(self) -> ShapeBank {
        self.bank
    }

    pub fn num_classes(&self) -> usize {
        self.bank.num_classes()
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.bank.entries()[class].mean
    }

    pub fn shape(&self, class: usize) -> &GeometricShape {
        &self.bank.entries()[class].shape
    }
}

/// Prototype (class mean) and shape of every class of `kb_set`.
pub fn build_knowledge_base(kb_set: &EmbeddingSet, m: usize, mode: CovarianceMode) -> Result<KnowledgeBase> {
    let geoms = per_class_geometry(kb_set, m, mode)?;
    let mut entries = Vec::with_capacity(geoms.len());
    for (class, g) in geoms.into_iter().enumerate() {
        let g = g.ok_or(Error::EmptyClass { class })?;
        entries.push(BankEntry { shape: g.shape, mean: g.prototype, count: g.count });
    }
    KnowledgeBase::from_bank(ShapeBank::new(kb_set.dim(), m, entries, None)?)
}

/// One knowledge-base candidate for a query prototype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub class: usize,
    pub cosine: f64,
}

/// Knowledge-base classes ranked by descending cosine to `prototype`, ties
/// broken by ascending class id; the first `top_k` are returned.
pub fn match_class(prototype: &[f64], kb: &KnowledgeBase, top_k: usize) -> Result<Vec<Match>> {
    if prototype.len() != kb.bank.dim() {
        return Err(Error::DimensionMismatch { expected: kb.bank.dim(), found: prototype.len() });
    }
    if math::norm(prototype) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut ranked: Vec<Match> = (0..kb.num_classes())
        .map(|c| {
            let cosine = math::cosine(prototype, kb.prototype(c)).ok_or(Error::ZeroVector)?;
            Ok(Match { class: c, cosine })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| b.cosine.total_cmp(&a.cosine).then(a.class.cmp(&b.class)));
    ranked.truncate(top_k);
    Ok(ranked)
}

/// How many rows an under-represented class is brought up to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentTarget {
    /// The count of the most frequent class.
    #[default]
    MaxClassCount,
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailPolicy {
    /// Classes with fewer training rows are perturbed by the layer.
    /// `None` means `max(1, N_max / 10)`.
    pub tail_threshold: Option<usize>,
    pub match_top_k: usize,
    pub augment_target: AugmentTarget,
    pub scale_mode: ScaleMode,
    /// Rescale donor eigenvalues so the donor size equals the local size.
    pub rescale_to_local_size: bool,
}

impl Default for TailPolicy {
    fn default() -> Self {
        Self {
            tail_threshold: None,
            match_top_k: 1,
            augment_target: AugmentTarget::MaxClassCount,
            scale_mode: ScaleMode::Lambda,
            rescale_to_local_size: false,
        }
    }
}

impl TailPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.tail_threshold == Some(0) {
            return Err(Error::InvalidSpec("tail_threshold must be >= 1".into()));
        }
        if self.match_top_k == 0 {
            return Err(Error::InvalidSpec("match_top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, counts: &[usize]) -> usize {
        self.tail_threshold.unwrap_or_else(|| (counts.iter().copied().max().unwrap_or(0) / 10).max(1))
    }

    /// Tail membership per class.
    pub fn tail_classes(&self, counts: &[usize]) -> Vec<bool> {
        let t = self.threshold(counts);
        counts.iter().map(|&c| c < t).collect()
    }

    pub fn target(&self, counts: &[usize]) -> usize {
        match self.augment_target {
            AugmentTarget::MaxClassCount => counts.iter().copied().max().unwrap_or(0),
            AugmentTarget::Explicit(n) => n,
        }
    }
}

/// Donor chosen for one class, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub class: usize,
    pub donor: usize,
    pub cosine: f64,
    /// Similarity between the class's own (few-sample) shape and the donor's.
    pub shape_similarity: f64,
    /// Ranked alternatives up to `match_top_k`, the donor first.
    pub candidates: Vec<Match>,
}

/// Matches each listed class of `set` to its top knowledge-base donor.
pub fn match_classes(
    set: &EmbeddingSet,
    classes: &[usize],
    kb: &KnowledgeBase,
    top_k: usize,
    mode: CovarianceMode,
) -> Result<Vec<MatchRecord>> {
    let stats = crate::geometry::all_class_stats(set, mode);
    classes.iter().map(|&c| match_one(&stats, c, kb, top_k.max(1))).collect()
}

fn match_one(stats: &[ClassStats], class: usize, kb: &KnowledgeBase, top_k: usize) -> Result<MatchRecord> {
    let s = stats.get(class).filter(|s| s.count > 0).ok_or(Error::EmptyClass { class })?;
    let candidates = match_class(&s.mean, kb, top_k)?;
    let best = candidates[0];
    let m = kb.bank.m();
    let own = crate::geometry::shape_of(&s.covariance, m)?;
    let shape_similarity = shape_similarity(&own, kb.shape(best.class))?;
    Ok(MatchRecord { class, donor: best.class, cosine: best.cosine, shape_similarity, candidates })
}

fn donor_shape(kb: &KnowledgeBase, record: &MatchRecord, local: &ClassStats, policy: &TailPolicy) -> GeometricShape {
    let shape = kb.shape(record.donor);
    if !policy.rescale_to_local_size {
        return shape.clone();
    }
    let donor_size = size_of_shape(shape);
    let local_size = local.covariance.trace();
    if donor_size > 0.0 && local_size > 0.0 {
        shape.rescaled(local_size / donor_size)
    } else {
        shape.clone()
    }
}

/// Augments every class below the policy target with its matched donor's
/// shape. Original rows are kept unchanged and first.
pub fn calibrate_tail(
    train: &EmbeddingSet,
    kb: &KnowledgeBase,
    policy: &TailPolicy,
    mode: CovarianceMode,
    seed: u64,
) -> Result<(EmbeddingSet, Vec<MatchRecord>)> {
    policy.validate()?;
    let counts = train.class_counts();
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }
    let target = policy.target(&counts);
    let stats = crate::geometry::all_class_stats(train, mode);
    let index = train.class_index();
    let mut out = train.clone();
    let mut records = Vec::new();
    for (class, rows) in index.iter().enumerate() {
        if rows.len() >= target {
            continue;
        }
        let record = match_one(&stats, class, kb, policy.match_top_k)?;
        let shape = donor_shape(kb, &record, &stats[class], policy);
        let centers: Vec<&[f32]> = rows.iter().map(|&i| train.row(i)).collect();
        let mut rng = substream(seed, &[class as u64]);
        let generated = augment_class(&centers, &shape, target, policy.scale_mode, &mut rng)?;
        for (j, row) in generated.iter().enumerate() {
            let domain = train.domain(rows[j % rows.len()]);
            out.append_rows(core::slice::from_ref(row), class, domain, RowOrigin::Perturbed)?;
        }
        records.push(record);
    }
    Ok((out, records))
}

/// Class sampling probabilities `P_i ∝ N_max / N_i`.
pub fn inverse_sampling_probs(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount { class });
    }
    let n_max = counts.iter().copied().max().unwrap_or(0) as f64;
    let weights: Vec<f64> = counts.iter().map(|&n| n_max / n as f64).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// In-training perturbation of tail-class rows.
///
/// Every tail row in a batch gets a fresh perturbation from its class's
/// matched shape; other rows, and all labels, pass through untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct GgeurLayer {
    dim: usize,
    tail: Vec<bool>,
    shapes: Vec<Option<GeometricShape>>,
    scale: ScaleMode,
}

impl GgeurLayer {
    /// `shapes[c]` must be present for every class with `tail[c]`.
    pub fn new(dim: usize, tail: Vec<bool>, shapes: Vec<Option<GeometricShape>>, scale: ScaleMode) -> Result<Self> {
        if tail.len() != shapes.len() {
            return Err(Error::DimensionMismatch { expected: tail.len(), found: shapes.len() });
        }
        for (class, (&t, s)) in tail.iter().zip(&shapes).enumerate() {
            match s {
                None if t => return Err(Error::MissingShape { class }),
                Some(s) if s.dim() != dim => {
                    return Err(Error::DimensionMismatch { expected: dim, found: s.dim() })
                }
                _ => {}
            }
        }
        Ok(Self { dim, tail, shapes, scale })
    }

    /// Matches the tail classes of `train` (per `policy`) to donors in `kb`.
    pub fn from_knowledge_base(
        train: &EmbeddingSet,
        kb: &KnowledgeBase,
        policy: &TailPolicy,
        mode: CovarianceMode,
    ) -> Result<(Self, Vec<MatchRecord>)> {
        policy.validate()?;
        let counts = train.class_counts();
        let tail: Vec<bool> = policy.tail_classes(&counts).into_iter().zip(&counts).map(|(t, &n)| t && n > 0).collect();
        let tail_ids: Vec<usize> = (0..tail.len()).filter(|&c| tail[c]).collect();
        let stats = crate::geometry::all_class_stats(train, mode);
        let mut shapes = vec![None; counts.len()];
        let mut records = Vec::with_capacity(tail_ids.len());
        for &c in &tail_ids {
            let rec = match_one(&stats, c, kb, policy.match_top_k)?;
            shapes[c] = Some(donor_shape(kb, &rec, &stats[c], policy));
            records.push(rec);
        }
        Ok((Self::new(train.dim(), tail, shapes, policy.scale_mode)?, records))
    }

    pub fn is_tail(&self, class: usize) -> bool {
        self.tail.get(class).copied().unwrap_or(false)
    }

    pub fn tail_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.tail.iter().enumerate().filter(|(_, &t)| t).map(|(c, _)| c)
    }

    /// Perturbs tail rows of a flattened `labels.len() × dim` batch in place.
    pub fn apply<R: Rng + ?Sized>(&self, batch: &mut [f64], labels: &[usize], rng: &mut R) -> Result<()> {
        if batch.len() != labels.len() * self.dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * self.dim, found: batch.len() });
        }
        for (row, &label) in batch.chunks_exact_mut(self.dim).zip(labels) {
            if !self.is_tail(label) {
                continue;
            }
            let shape = self.shapes[label].as_ref().ok_or(Error::MissingShape { class: label })?;
            add_perturbation(row, shape, self.scale, rng);
        }
        Ok(())
    }
}

/// Applies the layer to a batch of `(row, class)` pairs, returning the
/// transformed rows.
pub fn ggeur_layer<R: Rng + ?Sized>(
    batch: &[(Vec<f64>, usize)],
    layer: &GgeurLayer,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut flat: Vec<f64> = Vec::with_capacity(batch.len() * layer.dim);
    let mut labels = Vec::with_capacity(batch.len());
    for (row, class) in batch {
        if row.len() != layer.dim {
            return Err(Error::DimensionMismatch { expected: layer.dim, found: row.len() });
        }
        flat.extend_from_slice(row);
        labels.push(*class);
    }
    layer.apply(&mut flat, &labels, rng)?;
    Ok(flat.chunks_exact(layer.dim).map(<[f64]>::to_vec).zip(labels).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn kb_from(rows: &[[f32; 2]], labels: &[u16], classes: usize) -> KnowledgeBase {
        let data = rows.iter().flatten().copied().collect();
        let set = EmbeddingSet::single_domain(2, data, labels.to_vec(), classes).unwrap();
        build_knowledge_base(&set, 1, CovarianceMode::Centered).unwrap()
    }

    #[test]
    fn duplicated_kb_class_has_zero_shape() {
        let kb = kb_from(&[[1.0, 2.0], [1.0, 2.0]], &[0, 0], 1);
        assert_eq!(kb.prototype(0), &[1.0, 2.0]);
        assert!(kb.shape(0).eigenvalues().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn empty_kb_class() {
        let data = vec![1.0, 0.0];
        let set = EmbeddingSet::single_domain(2, data, vec![0], 2).unwrap();
        assert_eq!(build_knowledge_base(&set, 1, CovarianceMode::Centered).unwrap_err(), Error::EmptyClass { class: 1 });
    }

    #[test]
    fn matching_examples() {
        let kb = kb_from(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], &[0, 1, 2], 3);
        let m = match_class(&[0.9, 0.1], &kb, 3).unwrap();
        assert_eq!(m.iter().map(|m| m.class).collect::<Vec<_>>(), vec![0, 1, 2]);
        // identical prototypes 1 and 2: lower id first
        let m = match_class(&[0.0, 1.0], &kb, 2).unwrap();
        assert_eq!((m[0].class, m[1].class), (1, 2));
        assert_eq!(match_class(&[0.0, 0.0], &kb, 1).unwrap_err(), Error::ZeroVector);
    }

    #[test]
    fn inverse_probs_closed_form() {
        let p = inverse_sampling_probs(&[100, 10, 1]).unwrap();
        assert_eq!(p, vec![1.0 / 111.0, 10.0 / 111.0, 100.0 / 111.0]);
        assert_eq!(inverse_sampling_probs(&[7, 7, 7, 7]).unwrap(), vec![0.25; 4]);
        assert_eq!(inverse_sampling_probs(&[3]).unwrap(), vec![1.0]);
        assert_eq!(inverse_sampling_probs(&[3, 0]).unwrap_err(), Error::ZeroCount { class: 1 });
    }

    #[test]
    fn policy_defaults() {
        let p = TailPolicy::default();
        assert_eq!(p.threshold(&[5000, 400, 50]), 500);
        assert_eq!(p.tail_classes(&[5000, 400, 500]), vec![false, true, false]);
        assert_eq!(p.target(&[5000, 400]), 5000);
        assert!(TailPolicy { match_top_k: 0, ..p }.validate().is_err());
    }

    #[test]
    fn layer_identity_cases() {
        let axis = GeometricShape::from_parts(2, vec![1.0, 0.0], vec![1.0, 0.5]).unwrap();
        let layer = GgeurLayer::new(2, vec![false, true], vec![None, Some(axis)], ScaleMode::Lambda).unwrap();
        let batch = vec![(vec![1.0, 2.0], 0), (vec![3.0, 4.0], 0)];
        assert_eq!(ggeur_layer(&batch, &layer, &mut stream(1)).unwrap(), batch);

        let zero = GeometricShape::degenerate(2, 1);
        let layer = GgeurLayer::new(2, vec![true], vec![Some(zero)], ScaleMode::Lambda).unwrap();
        let batch = vec![(vec![1.0, 2.0], 0)];
        assert_eq!(ggeur_layer(&batch, &layer, &mut stream(1)).unwrap(), batch);

        assert_eq!(
            GgeurLayer::new(2, vec![true], vec![None], ScaleMode::Lambda).unwrap_err(),
            Error::MissingShape { class: 0 }
        );
    }

    #[test]
    fn layer_draws_fresh_noise_per_occurrence() {
        let axis = GeometricShape::from_parts(2, vec![1.0, 0.0], vec![1.0, 0.5]).unwrap();
        let layer = GgeurLayer::new(2, vec![true], vec![Some(axis)], ScaleMode::Lambda).unwrap();
        let batch = vec![(vec![1.0, 2.0], 0), (vec![1.0, 2.0], 0)];
        let out = ggeur_layer(&batch, &layer, &mut stream(3)).unwrap();
        assert_ne!(out[0].0, out[1].0);
        assert_eq!(out[0].1, 0);
        // only the first coordinate moves (the retained direction is e_1)
        assert_eq!(out[0].0[1], 2.0);
    }

    #[test]
    fn balanced_set_is_unchanged_by_calibration() {
        let kb = kb_from(&[[1.0, 0.0], [0.0, 1.0]], &[0, 1], 2);
        let data = vec![1.0, 0.1, 0.9, 0.0, 0.0, 1.0, 0.1, 1.0];
        let train = EmbeddingSet::single_domain(2, data, vec![0, 0, 1, 1], 2).unwrap();
        let (out, recs) = calibrate_tail(&train, &kb, &TailPolicy::default(), CovarianceMode::Centered, 0).unwrap();
        assert_eq!(out, train);
        assert!(recs.is_empty());
    }
}
