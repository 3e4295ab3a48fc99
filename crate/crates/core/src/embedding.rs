//! Labeled, domain-tagged embedding matrices.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Where a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowOrigin {
    /// A real sample.
    Observed,
    /// A real sample shifted by a geometry-guided perturbation.
    Perturbed,
    /// Generated around a prototype transferred from another domain.
    PrototypeTransfer,
}

impl RowOrigin {
    pub fn code(self) -> u8 {
        match self {
            RowOrigin::Observed => 0,
            RowOrigin::Perturbed => 1,
            RowOrigin::PrototypeTransfer => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RowOrigin::Observed),
            1 => Some(RowOrigin::Perturbed),
            2 => Some(RowOrigin::PrototypeTransfer),
            _ => None,
        }
    }

    pub fn is_synthetic(self) -> bool {
        self != RowOrigin::Observed
    }
}

/// `n × p` row-major `f32` embeddings with a class label and a domain index
/// per row.
///
/// Immutable once built: every constructor validates the invariants and all
/// transformations return a new set.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    labels: Vec<u16>,
    domains: Vec<u16>,
    num_classes: usize,
    num_domains: usize,
    class_names: Option<Vec<String>>,
    domain_names: Option<Vec<String>>,
    origins: Option<Vec<RowOrigin>>,
}

/// Largest class or domain count representable in the container format.
pub const MAX_INDEX: usize = u16::MAX as usize + 1;

impl EmbeddingSet {
    pub fn new(
        dim: usize,
        data: Vec<f32>,
        labels: Vec<u16>,
        domains: Vec<u16>,
        num_classes: usize,
        num_domains: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("embedding dimension must be at least 1".into()));
        }
        if num_classes > MAX_INDEX || num_domains > MAX_INDEX || num_domains == 0 {
            return Err(Error::InvalidSpec("class/domain count out of range".into()));
        }
        let n = labels.len();
        if data.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, found: data.len() });
        }
        if domains.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: domains.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { row: pos / dim, col: pos % dim });
        }
        for (row, &l) in labels.iter().enumerate() {
            if l as usize >= num_classes {
                return Err(Error::InvalidLabel { row, label: l as usize, num_classes });
            }
        }
        for (row, &d) in domains.iter().enumerate() {
            if d as usize >= num_domains {
                return Err(Error::InvalidDomain { row, domain: d as usize, num_domains });
            }
        }
        Ok(Self {
            dim,
            data,
            labels,
            domains,
            num_classes,
            num_domains,
            class_names: None,
            domain_names: None,
            origins: None,
        })
    }

    /// Single-domain set.
    pub fn single_domain(dim: usize, data: Vec<f32>, labels: Vec<u16>, num_classes: usize) -> Result<Self> {
        let n = labels.len();
        Self::new(dim, data, labels, vec![0; n], num_classes, 1)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::DimensionMismatch { expected: self.num_classes, found: names.len() });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn with_domain_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_domains {
            return Err(Error::DimensionMismatch { expected: self.num_domains, found: names.len() });
        }
        self.domain_names = Some(names);
        Ok(self)
    }

    pub fn with_origins(mut self, origins: Vec<RowOrigin>) -> Result<Self> {
        if origins.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: origins.len() });
        }
        self.origins = Some(origins);
        Ok(self)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn domains(&self) -> &[u16] {
        &self.domains
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn domain_names(&self) -> Option<&[String]> {
        self.domain_names.as_deref()
    }

    /// Per-row provenance; `None` means every row is observed.
    pub fn origins(&self) -> Option<&[RowOrigin]> {
        self.origins.as_deref()
    }

    pub fn origin(&self, i: usize) -> RowOrigin {
        self.origins.as_ref().map_or(RowOrigin::Observed, |o| o[i])
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    #[inline]
    pub fn domain(&self, i: usize) -> usize {
        self.domains[i] as usize
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Row indices grouped by class, ascending within each class.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            idx[l as usize].push(i);
        }
        idx
    }

    pub fn rows_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct domain indices present in the rows, ascending.
    pub fn present_domains(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_domains];
        for &d in &self.domains {
            seen[d as usize] = true;
        }
        seen.iter().enumerate().filter(|(_, &s)| s).map(|(d, _)| d).collect()
    }

    /// New set holding the given rows in the given order. Names and the
    /// class/domain ranges are kept.
    pub fn subset(&self, indices: &[usize]) -> EmbeddingSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut domains = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            domains.push(self.domains[i]);
        }
        EmbeddingSet {
            dim: self.dim,
            data,
            labels,
            domains,
            num_classes: self.num_classes,
            num_domains: self.num_domains,
            class_names: self.class_names.clone(),
            domain_names: self.domain_names.clone(),
            origins: self.origins.as_ref().map(|o| indices.iter().map(|&i| o[i]).collect()),
        }
    }

    /// Rows scaled to unit Euclidean norm; zero rows are left as they are.
    pub fn l2_normalized(&self) -> EmbeddingSet {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.dim) {
            let norm = crate::math::sqrt(row.iter().map(|&v| (v as f64) * (v as f64)).sum());
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
            }
        }
        out
    }

    /// Appends synthetic rows. Values must be finite, labels and domains in
    /// range; violations return an error and leave `self` unchanged.
    pub fn append_rows(
        &mut self,
        rows: &[Vec<f32>],
        label: usize,
        domain: usize,
        origin: RowOrigin,
    ) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::InvalidLabel { row: self.len(), label, num_classes: self.num_classes });
        }
        if domain >= self.num_domains {
            return Err(Error::InvalidDomain { row: self.len(), domain, num_domains: self.num_domains });
        }
        for (k, r) in rows.iter().enumerate() {
            if r.len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: r.len() });
            }
            if let Some(col) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEntry { row: self.len() + k, col });
            }
        }
        if rows.is_empty() {
            return Ok(());
        }
        if self.origins.is_none() && origin != RowOrigin::Observed {
            self.origins = Some(vec![RowOrigin::Observed; self.len()]);
        }
        for r in rows {
            self.data.extend_from_slice(r);
            self.labels.push(label as u16);
            self.domains.push(domain as u16);
            if let Some(o) = self.origins.as_mut() {
                o.push(origin);
            }
        }
        Ok(())
    }
}
