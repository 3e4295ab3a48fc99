//! Splitting a labeled set across clients or into a long-tailed subset.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::math;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Per class, client shares drawn from `Dirichlet(β·1_K)`; each sample
    /// then goes to a client drawn from those shares.
    DirichletLabelSkew,
    /// Client `d` receives the rows of domain `d`.
    FixedAssignment,
    /// Keeps `⌊n_max · IF^{-k/(C-1)}⌋` rows of class `k` (at least one).
    LongtailExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_imbalance")]
    pub imbalance_factor: f64,
    #[serde(default = "default_clients")]
    pub num_clients: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta() -> f64 {
    0.5
}
fn default_imbalance() -> f64 {
    100.0
}
fn default_clients() -> usize {
    4
}

impl PartitionSpec {
    pub fn dirichlet(beta: f64, num_clients: usize, seed: u64) -> Self {
        Self { kind: PartitionKind::DirichletLabelSkew, beta, imbalance_factor: 1.0, num_clients, seed }
    }

    pub fn fixed_assignment() -> Self {
        Self { kind: PartitionKind::FixedAssignment, beta: 1.0, imbalance_factor: 1.0, num_clients: 0, seed: 0 }
    }

    pub fn longtail(imbalance_factor: f64, seed: u64) -> Self {
        Self { kind: PartitionKind::LongtailExponential, beta: 1.0, imbalance_factor, num_clients: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PartitionKind::DirichletLabelSkew => {
                if !(self.beta > 0.0 && self.beta.is_finite()) {
                    return Err(Error::InvalidSpec(alloc::format!("beta must be > 0, got {}", self.beta)));
                }
                if self.num_clients == 0 {
                    return Err(Error::InvalidSpec("num_clients must be positive".into()));
                }
            }
            PartitionKind::LongtailExponential => {
                if !(self.imbalance_factor >= 1.0 && self.imbalance_factor.is_finite()) {
                    return Err(Error::InvalidSpec(alloc::format!(
                        "imbalance_factor must be >= 1, got {}",
                        self.imbalance_factor
                    )));
                }
            }
            PartitionKind::FixedAssignment => {}
        }
        Ok(())
    }
}

/// Per-client row index lists, each ascending.
///
/// `LongtailExponential` returns a single list (the kept rows).
pub fn partition(set: &EmbeddingSet, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    match spec.kind {
        PartitionKind::DirichletLabelSkew => dirichlet_label_skew(set, spec.beta, spec.num_clients, spec.seed),
        PartitionKind::FixedAssignment => {
            let mut out = vec![Vec::new(); set.num_domains()];
            for i in 0..set.len() {
                out[set.domain(i)].push(i);
            }
            Ok(out)
        }
        PartitionKind::LongtailExponential => longtail_exponential(set, spec.imbalance_factor, spec.seed).map(|v| vec![v]),
    }
}

/// Symmetric Dirichlet draw by stick breaking over Beta marginals, which
/// stays well behaved for very small concentrations.
pub fn symmetric_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; k];
    if k == 0 {
        return Ok(out);
    }
    let mut remaining = 1.0;
    for (i, share) in out[..k - 1].iter_mut().enumerate() {
        let rest = alpha * (k - 1 - i) as f64;
        let beta = Beta::new(alpha, rest).map_err(|e| Error::InvalidSpec(alloc::format!("{e}")))?;
        let x: f64 = beta.sample(rng);
        *share = remaining * x;
        remaining -= *share;
        if remaining <= 0.0 {
            remaining = 0.0;
        }
    }
    out[k - 1] = remaining;
    Ok(out)
}

fn dirichlet_label_skew(set: &EmbeddingSet, beta: f64, clients: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let index = set.class_index();
    if let Some(class) = index.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass { class });
    }
    let mut out = vec![Vec::new(); clients];
    for (class, rows) in index.iter().enumerate() {
        let mut rng = substream(seed, &[class as u64]);
        let shares = symmetric_dirichlet(beta, clients, &mut rng)?;
        let mut cumulative = Vec::with_capacity(clients);
        let mut acc = 0.0;
        for s in &shares {
            acc += s;
            cumulative.push(acc);
        }
        for &i in rows {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cumulative.iter().position(|&c| u < c).unwrap_or(clients - 1);
            out[k].push(i);
        }
    }
    out.iter_mut().for_each(|v| v.sort_unstable());
    Ok(out)
}

/// Per-class counts kept by the exponential long-tail profile.
pub fn longtail_counts(max_count: usize, num_classes: usize, imbalance_factor: f64) -> Vec<usize> {
    (0..num_classes)
        .map(|k| {
            let frac = if num_classes > 1 { k as f64 / (num_classes - 1) as f64 } else { 0.0 };
            let v = max_count as f64 * math::powf(imbalance_factor, -frac);
            // Guard against pow rounding just below an integer.
            let n = libm::floor(v + 1e-9) as usize;
            n.max(1)
        })
        .collect()
}

fn longtail_exponential(set: &EmbeddingSet, imbalance_factor: f64, seed: u64) -> Result<Vec<usize>> {
    let index = set.class_index();
    let max_count = index.iter().map(Vec::len).max().unwrap_or(0);
    let targets = longtail_counts(max_count, index.len(), imbalance_factor);
    let mut kept = Vec::new();
    for (class, rows) in index.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::EmptyClass { class });
        }
        let mut rows = rows.clone();
        let mut rng = substream(seed, &[class as u64]);
        rows.shuffle(&mut rng);
        rows.truncate(targets[class].min(rows.len()));
        kept.extend(rows);
    }
    kept.sort_unstable();
    Ok(kept)
}
