//! Studies of how class geometry transfers between embedding sets: ranking
//! similar classes, comparing their shapes and sizes, and checking whether
//! few-sample matches agree with full-sample ones.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::calibrate::{build_knowledge_base, match_class, KnowledgeBase};
use crate::embedding::EmbeddingSet;
use crate::geometry::{per_class_geometry, shape_similarity, size_of_shape, ClassGeometry, CovarianceMode};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::substream;
use crate::{Error, Result};

/// One candidate class in a reference class's similarity ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub ref_class: usize,
    /// 1-based rank by class similarity.
    pub rank: usize,
    pub cand_class: usize,
    pub class_similarity: f64,
    pub shape_similarity: f64,
}

fn dense_kb(set: &EmbeddingSet, m: usize, mode: CovarianceMode) -> Result<KnowledgeBase> {
    if set.is_empty() {
        return Err(Error::EmptyClass { class: 0 });
    }
    build_knowledge_base(set, m, mode)
}

/// For every reference class, all candidate classes ranked by prototype
/// cosine (ties by ascending class id) with their shape similarity.
pub fn consistency_curve(
    ref_set: &EmbeddingSet,
    cand_set: &EmbeddingSet,
    m: usize,
    mode: CovarianceMode,
) -> Result<Vec<ConsistencyRow>> {
    if ref_set.dim() != cand_set.dim() {
        return Err(Error::DimensionMismatch { expected: ref_set.dim(), found: cand_set.dim() });
    }
    let reference = dense_kb(ref_set, m, mode)?;
    let candidates = dense_kb(cand_set, m, mode)?;
    let mut rows = Vec::new();
    for r in 0..reference.num_classes() {
        let ranked = match_class(reference.prototype(r), &candidates, candidates.num_classes())?;
        for (rank, mt) in ranked.iter().enumerate() {
            rows.push(ConsistencyRow {
                ref_class: r,
                rank: rank + 1,
                cand_class: mt.class,
                class_similarity: mt.cosine,
                shape_similarity: shape_similarity(reference.shape(r), candidates.shape(mt.class))?,
            });
        }
    }
    Ok(rows)
}

/// Containment fractions for one subsample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub top1: f64,
    pub top2: f64,
    pub top3: f64,
}

/// Monte-Carlo check of few-sample matching.
///
/// For every nonempty class of `full_set` the full-sample prototype is
/// matched against `kb` to get its top-3 classes. Then, per size and trial,
/// `size` rows of the class are drawn without replacement (all rows when the
/// class is smaller), the subsample prototype's top-1 match is computed, and
/// its membership in the full top-1/2/3 is recorded.
pub fn matching_stability(
    full_set: &EmbeddingSet,
    sizes: &[usize],
    kb: &KnowledgeBase,
    trials: usize,
    seed: u64,
) -> Result<Vec<StabilityRow>> {
    if let Some(&bad) = sizes.iter().find(|&&s| s == 0) {
        return Err(Error::InvalidSize(bad));
    }
    if trials == 0 {
        return Err(Error::InvalidSpec("trials must be >= 1".into()));
    }
    if kb.num_classes() == 0 {
        return Err(Error::EmptyClass { class: 0 });
    }
    let index = full_set.class_index();
    let classes: Vec<usize> = (0..index.len()).filter(|&c| !index[c].is_empty()).collect();
    let mut full_top = Vec::with_capacity(classes.len());
    for &c in &classes {
        let proto = mean_of(full_set, &index[c]);
        let top: Vec<usize> = match_class(&proto, kb, 3)?.iter().map(|m| m.class).collect();
        full_top.push(top);
    }

    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut hits = [0usize; 3];
        let mut total = 0usize;
        for (ci, &c) in classes.iter().enumerate() {
            let rows = &index[c];
            for t in 0..trials {
                let mut rng = substream(seed, &[size as u64, c as u64, t as u64]);
                let picked: Vec<usize> = if size >= rows.len() {
                    rows.clone()
                } else {
                    sample(&mut rng, rows.len(), size).into_iter().map(|k| rows[k]).collect()
                };
                let proto = mean_of(full_set, &picked);
                total += 1;
                let Ok(best) = match_class(&proto, kb, 1) else { continue };
                let best = best[0].class;
                let top = &full_top[ci];
                for (k, h) in hits.iter_mut().enumerate() {
                    if top.iter().take(k + 1).any(|&x| x == best) {
                        *h += 1;
                    }
                }
            }
        }
        let frac = |h: usize| if total == 0 { 0.0 } else { h as f64 / total as f64 };
        out.push(StabilityRow { size, top1: frac(hits[0]), top2: frac(hits[1]), top3: frac(hits[2]) });
    }
    Ok(out)
}

fn mean_of(set: &EmbeddingSet, rows: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; set.dim()];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(set.row(i)) {
            *m += v as f64;
        }
    }
    let n = rows.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Size comparison between a reference class and its best-matching
/// candidate class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRatioRow {
    pub ref_class: usize,
    pub cand_class: usize,
    pub class_similarity: f64,
    pub ref_size: f64,
    pub cand_size: f64,
    /// `ref_size / cand_size`.
    pub ratio: f64,
}

/// Size ratio of every reference class to its top-1 matched candidate.
pub fn size_ratios(reference: &KnowledgeBase, candidates: &KnowledgeBase) -> Result<Vec<SizeRatioRow>> {
    (0..reference.num_classes())
        .map(|r| {
            let best = match_class(reference.prototype(r), candidates, 1)?[0];
            let ref_size = size_of_shape(reference.shape(r));
            let cand_size = size_of_shape(candidates.shape(best.class));
            Ok(SizeRatioRow {
                ref_class: r,
                cand_class: best.class,
                class_similarity: best.cosine,
                ref_size,
                cand_size,
                ratio: ref_size / cand_size,
            })
        })
        .collect()
}

/// `C_a × C_b` matrix of shape similarities; `NaN` where either class is
/// absent.
pub fn shape_similarity_matrix(a: &[Option<ClassGeometry>], b: &[Option<ClassGeometry>]) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.len(), b.len());
    for (i, ga) in a.iter().enumerate() {
        for (j, gb) in b.iter().enumerate() {
            out[(i, j)] = match (ga, gb) {
                (Some(x), Some(y)) => shape_similarity(&x.shape, &y.shape)?,
                _ => f64::NAN,
            };
        }
    }
    Ok(out)
}

/// Shape-similarity matrix between the classes of two domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPairSimilarity {
    pub domain_a: usize,
    pub domain_b: usize,
    pub matrix: Matrix,
}

impl DomainPairSimilarity {
    /// Mean of the finite diagonal entries (same class in both domains).
    pub fn mean_same_class(&self) -> f64 {
        let v: Vec<f64> = (0..self.matrix.rows().min(self.matrix.cols()))
            .map(|i| self.matrix[(i, i)])
            .filter(|v| v.is_finite())
            .collect();
        math::mean(&v)
    }

    /// Mean of the finite off-diagonal entries.
    pub fn mean_cross_class(&self) -> f64 {
        let mut v = Vec::new();
        for i in 0..self.matrix.rows() {
            for j in 0..self.matrix.cols() {
                if i != j && self.matrix[(i, j)].is_finite() {
                    v.push(self.matrix[(i, j)]);
                }
            }
        }
        math::mean(&v)
    }
}

/// Per-domain class shapes compared across every ordered domain pair
/// `a < b`.
pub fn cross_domain_similarity(set: &EmbeddingSet, m: usize, mode: CovarianceMode) -> Result<Vec<DomainPairSimilarity>> {
    let mut per_domain = Vec::with_capacity(set.num_domains());
    for d in 0..set.num_domains() {
        let rows: Vec<usize> = (0..set.len()).filter(|&i| set.domain(i) == d).collect();
        per_domain.push(per_class_geometry(&set.subset(&rows), m, mode)?);
    }
    let mut out = Vec::new();
    for a in 0..per_domain.len() {
        for b in (a + 1)..per_domain.len() {
            out.push(DomainPairSimilarity {
                domain_a: a,
                domain_b: b,
                matrix: shape_similarity_matrix(&per_domain[a], &per_domain[b])?,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> EmbeddingSet {
        // three classes around distinct directions, tiny spread
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let centers = [[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for (c, ctr) in centers.iter().enumerate() {
            for k in 0..4 {
                let d = 0.01 * k as f32;
                data.extend_from_slice(&[ctr[0] + d, ctr[1] - d, ctr[2] + 0.5 * d]);
                labels.push(c as u16);
            }
        }
        EmbeddingSet::single_domain(3, data, labels, 3).unwrap()
    }

    #[test]
    fn self_consistency_ranks_each_class_first() {
        let s = blobs();
        let rows = consistency_curve(&s, &s, 2, CovarianceMode::Centered).unwrap();
        assert_eq!(rows.len(), 9);
        for r in rows.iter().filter(|r| r.rank == 1) {
            assert_eq!(r.ref_class, r.cand_class);
            assert!((r.shape_similarity - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stability_full_size_is_perfect_and_zero_size_rejected() {
        let s = blobs();
        let kb = build_knowledge_base(&s, 1, CovarianceMode::Centered).unwrap();
        let r = matching_stability(&s, &[4, 100], &kb, 3, 1).unwrap();
        assert!(r.iter().all(|r| r.top1 == 1.0 && r.top3 == 1.0));
        assert_eq!(matching_stability(&s, &[0], &kb, 3, 1).unwrap_err(), Error::InvalidSize(0));
    }

    #[test]
    fn size_ratio_against_self_is_one() {
        let s = blobs();
        let kb = build_knowledge_base(&s, 1, CovarianceMode::Centered).unwrap();
        for r in size_ratios(&kb, &kb).unwrap() {
            assert_eq!(r.ref_class, r.cand_class);
            assert_eq!(r.ratio, 1.0);
        }
    }
}
