//! Server-side reconstruction of global class geometry from client summaries.
//!
//! Clients upload, per class, only `(count, mean, covariance)`. The server
//! recombines them into the exact covariance of the pooled samples:
//!
//! ```text
//! N   = Σ_k n_k
//! μ   = (1/N) Σ_k n_k μ_k
//! Σ   = (1/N) (Σ_k n_k Σ_k + Σ_k n_k (μ_k - μ)(μ_k - μ)^T)
//! ```
//!
//! The cross terms between within-client deviations and between-client
//! offsets vanish identically for population statistics, so the identity is
//! exact, not approximate. Nothing in this module accepts raw rows except
//! [`ClientUpload::from_set`], which runs on the client.

use alloc::vec;
use alloc::vec::Vec;

use crate::embedding::EmbeddingSet;
use crate::geometry::{shape_of, ClassStats, CovarianceMode, GeometricShape, Prototype};
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Everything one client sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub client_id: u32,
    /// Domain the client's data comes from (0 in single-domain runs).
    pub domain: usize,
    /// One entry per class `0..C`; classes absent locally have count 0.
    pub classes: Vec<ClassStats>,
}

impl ClientUpload {
    pub fn new(client_id: u32, domain: usize, classes: Vec<ClassStats>) -> Result<Self> {
        if let Some(first) = classes.first() {
            let dim = first.dim();
            for s in &classes {
                if s.dim() != dim || s.covariance.rows() != dim || s.covariance.cols() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
                }
            }
        }
        Ok(Self { client_id, domain, classes })
    }

    /// Computes the upload for a client's local data.
    pub fn from_set(client_id: u32, domain: usize, set: &EmbeddingSet, mode: CovarianceMode) -> Self {
        Self { client_id, domain, classes: crate::geometry::all_class_stats(set, mode) }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.classes.first().map(ClassStats::dim)
    }

    fn class(&self, class: usize) -> Option<&ClassStats> {
        self.classes.get(class).filter(|s| s.count > 0)
    }
}

/// Pooled statistics of one class across the federation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalClassStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

fn sum_vectors(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let mut left = sum_vectors(a);
            let right = sum_vectors(b);
            left.iter_mut().zip(&right).for_each(|(x, y)| *x += y);
            left
        }
    }
}

fn sum_matrices(parts: &[Matrix]) -> Option<Matrix> {
    match parts.len() {
        0 => None,
        1 => Some(parts[0].clone()),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let mut left = sum_matrices(a)?;
            let right = sum_matrices(b)?;
            left.as_mut_slice().iter_mut().zip(right.as_slice()).for_each(|(x, y)| *x += y);
            Some(left)
        }
    }
}

/// Global count, mean and covariance of `class` from client uploads.
///
/// The result does not depend on the order of `uploads`.
pub fn aggregate_global(uploads: &[ClientUpload], class: usize) -> Result<GlobalClassStats> {
    let mut present: Vec<(&ClientUpload, &ClassStats)> =
        uploads.iter().filter_map(|u| u.class(class).map(|s| (u, s))).collect();
    if present.is_empty() {
        return Err(Error::NoSamples { class });
    }
    let dim = present[0].1.dim();
    for u in uploads {
        if let Some(d) = u.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d });
            }
        }
    }
    // Canonical order so floating-point summation is order independent.
    present.sort_by(|(ua, sa), (ub, sb)| {
        ua.client_id
            .cmp(&ub.client_id)
            .then(ua.domain.cmp(&ub.domain))
            .then(sa.count.cmp(&sb.count))
            .then_with(|| {
                let ka = sa.mean.iter().map(|v| v.to_bits());
                let kb = sb.mean.iter().map(|v| v.to_bits());
                ka.cmp(kb)
            })
    });

    let total: u64 = present.iter().map(|(_, s)| s.count).sum();
    let inv_total = 1.0 / total as f64;

    let weighted_means: Vec<Vec<f64>> = present
        .iter()
        .map(|(_, s)| s.mean.iter().map(|m| m * s.count as f64).collect())
        .collect();
    let mut mean = sum_vectors(&weighted_means);
    mean.iter_mut().for_each(|m| *m *= inv_total);

    let contributions: Vec<Matrix> = present
        .iter()
        .map(|(_, s)| {
            let n = s.count as f64;
            let mut c = s.covariance.clone();
            c.scale(n);
            let offset: Vec<f64> = s.mean.iter().zip(&mean).map(|(a, b)| a - b).collect();
            c.add_outer(n, &offset, &offset);
            c
        })
        .collect();
    let mut covariance = sum_matrices(&contributions).unwrap_or_else(|| Matrix::zeros(dim, dim));
    covariance.scale(inv_total);
    symmetrize(&mut covariance);

    Ok(GlobalClassStats { count: total, mean, covariance })
}

fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Global geometry of one class as held by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub shape: GeometricShape,
    pub mean: Vec<f64>,
    pub count: u64,
}

/// Per-class global shapes disseminated to clients, plus per-(class, domain)
/// prototypes in multi-domain runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBank {
    dim: usize,
    m: usize,
    entries: Vec<BankEntry>,
    prototypes: Option<Vec<Prototype>>,
}

impl ShapeBank {
    pub fn new(
        dim: usize,
        m: usize,
        entries: Vec<BankEntry>,
        prototypes: Option<Vec<Prototype>>,
    ) -> Result<Self> {
        for e in &entries {
            if e.shape.dim() != dim || e.mean.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.shape.dim() });
            }
            if e.shape.m() != m {
                return Err(Error::DimensionMismatch { expected: m, found: e.shape.m() });
            }
        }
        if let Some(ps) = &prototypes {
            for p in ps {
                if p.vector.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: p.vector.len() });
                }
                if p.class >= entries.len() {
                    return Err(Error::MissingShape { class: p.class });
                }
            }
        }
        Ok(Self { dim, m, entries, prototypes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn entry(&self, class: usize) -> Option<&BankEntry> {
        self.entries.get(class)
    }

    pub fn shape(&self, class: usize) -> Option<&GeometricShape> {
        self.entries.get(class).map(|e| &e.shape)
    }

    pub fn prototypes(&self) -> Option<&[Prototype]> {
        self.prototypes.as_deref()
    }

    /// Prototypes of `class`, ordered by domain.
    pub fn prototypes_of(&self, class: usize) -> impl Iterator<Item = &Prototype> {
        self.prototypes.iter().flatten().filter(move |p| p.class == class)
    }
}

/// Aggregates every class and decomposes it into a [`ShapeBank`].
///
/// With `include_prototypes`, the bank also carries one prototype per
/// (class, domain): the count-weighted mean of the local means uploaded by
/// clients of that domain.
pub fn build_shape_bank(uploads: &[ClientUpload], m: usize, include_prototypes: bool) -> Result<ShapeBank> {
    let num_classes = uploads.iter().map(ClientUpload::num_classes).max().unwrap_or(0);
    let dim = uploads
        .iter()
        .find_map(ClientUpload::dim)
        .ok_or_else(|| Error::InvalidSpec("no uploads".into()))?;

    let totals: Vec<u64> = (0..num_classes)
        .map(|c| uploads.iter().filter_map(|u| u.class(c)).map(|s| s.count).sum())
        .collect();
    let missing: Vec<usize> = (0..num_classes).filter(|&c| totals[c] == 0).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClass { classes: missing });
    }

    let mut entries = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let g = aggregate_global(uploads, class)?;
        let shape = shape_of(&g.covariance, m)?;
        entries.push(BankEntry { shape, mean: g.mean, count: g.count });
    }

    let prototypes = include_prototypes.then(|| domain_prototypes(uploads, num_classes, dim));
    ShapeBank::new(dim, m, entries, prototypes)
}

fn domain_prototypes(uploads: &[ClientUpload], num_classes: usize, dim: usize) -> Vec<Prototype> {
    let num_domains = uploads.iter().map(|u| u.domain + 1).max().unwrap_or(0);
    let mut out = Vec::new();
    for class in 0..num_classes {
        for domain in 0..num_domains {
            let mut parts: Vec<(u32, &ClassStats)> = uploads
                .iter()
                .filter(|u| u.domain == domain)
                .filter_map(|u| u.class(class).map(|s| (u.client_id, s)))
                .collect();
            if parts.is_empty() {
                continue;
            }
            parts.sort_by_key(|(id, _)| *id);
            let total: u64 = parts.iter().map(|(_, s)| s.count).sum();
            let mut mean = vec![0.0; dim];
            for (_, s) in &parts {
                for (acc, v) in mean.iter_mut().zip(&s.mean) {
                    *acc += v * s.count as f64;
                }
            }
            mean.iter_mut().for_each(|v| *v /= total as f64);
            out.push(Prototype::new(class, mean).with_domain(domain));
        }
    }
    out
}

/// Relative Frobenius distance used to compare aggregated and pooled
/// covariances.
pub fn covariance_agreement(a: &Matrix, b: &Matrix) -> f64 {
    let denom = b.frobenius_norm().max(a.frobenius_norm()).max(f64::MIN_POSITIVE);
    a.frobenius_distance(b) / denom
}

/// Sum of the counts a client holds across all classes.
pub fn upload_total(u: &ClientUpload) -> u64 {
    u.classes.iter().map(|s| s.count).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upload(id: u32, rows: &[[f32; 2]]) -> ClientUpload {
        let data = rows.iter().flatten().copied().collect();
        let set = EmbeddingSet::single_domain(2, data, vec![0; rows.len()], 1).unwrap();
        ClientUpload::from_set(id, 0, &set, CovarianceMode::Centered)
    }

    #[test]
    fn two_clients_hand_example() {
        let a = upload(0, &[[0.0, 0.0], [2.0, 0.0]]);
        let b = upload(1, &[[0.0, 2.0]]);
        let g = aggregate_global(&[a, b], 0).unwrap();
        assert_eq!(g.count, 3);
        for v in &g.mean {
            assert!((v - 2.0 / 3.0).abs() < 1e-15);
        }
        let expected = [8.0 / 9.0, -4.0 / 9.0, -4.0 / 9.0, 8.0 / 9.0];
        for (x, y) in g.covariance.as_slice().iter().zip(expected) {
            assert!((x - y).abs() < 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn single_client_collapses() {
        let a = upload(3, &[[0.5, 1.0], [1.5, -1.0], [0.0, 0.0]]);
        let g = aggregate_global(core::slice::from_ref(&a), 0).unwrap();
        assert_eq!(g.mean, a.classes[0].mean);
        assert!(g.covariance.frobenius_distance(&a.classes[0].covariance) < 1e-15);
    }

    #[test]
    fn equal_means_give_weighted_average() {
        let a = upload(0, &[[1.0, 0.0], [-1.0, 0.0]]);
        let b = upload(1, &[[0.0, 2.0], [0.0, -2.0], [0.0, 0.0], [0.0, 0.0]]);
        let g = aggregate_global(&[a.clone(), b.clone()], 0).unwrap();
        let mut expected = a.classes[0].covariance.clone();
        expected.scale(2.0);
        let mut tb = b.classes[0].covariance.clone();
        tb.scale(4.0);
        expected.as_mut_slice().iter_mut().zip(tb.as_slice()).for_each(|(x, y)| *x += y);
        expected.scale(1.0 / 6.0);
        assert!(g.covariance.frobenius_distance(&expected) < 1e-15);
    }

    #[test]
    fn no_samples_and_missing_class() {
        let empty = ClientUpload::new(0, 0, vec![ClassStats::empty(2)]).unwrap();
        assert_eq!(aggregate_global(core::slice::from_ref(&empty), 0).unwrap_err(), Error::NoSamples { class: 0 });
        let a = upload(1, &[[1.0, 1.0]]);
        let two = ClientUpload::new(1, 0, vec![a.classes[0].clone(), ClassStats::empty(2), ClassStats::empty(2)])
            .unwrap();
        assert_eq!(
            build_shape_bank(&[two, empty], 2, false).unwrap_err(),
            Error::MissingClass { classes: vec![1, 2] }
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = upload(0, &[[1.0, 1.0]]);
        let b = ClientUpload::new(1, 0, vec![ClassStats::empty(3)]).unwrap();
        assert!(matches!(aggregate_global(&[a, b], 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prototypes_are_pooled_per_domain() {
        let mk = |id: u32, domain: usize, rows: &[[f32; 2]]| {
            let data = rows.iter().flatten().copied().collect();
            let set = EmbeddingSet::new(2, data, vec![0; rows.len()], vec![domain as u16; rows.len()], 1, 2)
                .unwrap();
            ClientUpload::from_set(id, domain, &set, CovarianceMode::Centered)
        };
        let ups = [
            mk(0, 0, &[[0.0, 0.0]]),
            mk(1, 0, &[[3.0, 0.0], [3.0, 0.0]]),
            mk(2, 1, &[[0.0, 5.0], [1.0, 5.0]]),
        ];
        let bank = build_shape_bank(&ups, 1, true).unwrap();
        let protos: Vec<_> = bank.prototypes_of(0).collect();
        assert_eq!(protos.len(), 2);
        assert_eq!(protos[0].domain, Some(0));
        assert_eq!(protos[0].vector, vec![2.0, 0.0]);
        assert_eq!(protos[1].vector, vec![0.5, 5.0]);
        assert_eq!(bank.entry(0).unwrap().count, 5);
    }
}
