//! Geometry-guided embedding augmentation.
//!
//! A new sample is an existing embedding (or a transferred prototype) plus a
//! random combination of the class's principal directions:
//! `β = Σ_i ε_i s(λ_i) ξ_i` with `ε_i ~ N(0, 1)`, summed over the retained
//! directions of the class's global shape.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::ShapeBank;
use crate::embedding::{EmbeddingSet, RowOrigin};
use crate::geometry::GeometricShape;
use crate::math;
use crate::matrix::Matrix;
use crate::rng::substream;
use crate::{Error, Result};

const STEP_LOCAL: u64 = 1;
const STEP_PROTOTYPE: u64 = 2;

/// Scale applied to each eigen-direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `ε λ ξ`: per-direction variance `λ²`.
    #[default]
    Lambda,
    /// `ε √λ ξ`: per-direction variance `λ`, reproducing the covariance.
    SqrtLambda,
}

impl ScaleMode {
    #[inline]
    pub fn apply(self, lambda: f64) -> f64 {
        match self {
            ScaleMode::Lambda => lambda,
            ScaleMode::SqrtLambda => math::sqrt(lambda.max(0.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPlan {
    /// Rows per local class after augmentation (existing + new).
    pub target_count_per_class: usize,
    /// New rows generated around each foreign-domain prototype.
    pub per_prototype_count: usize,
    pub scale_mode: ScaleMode,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn single_domain(seed: u64) -> Self {
        Self { target_count_per_class: 2000, per_prototype_count: 500, scale_mode: ScaleMode::Lambda, seed }
    }

    pub fn multi_domain(seed: u64) -> Self {
        Self { target_count_per_class: 500, ..Self::single_domain(seed) }
    }
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self::single_domain(0)
    }
}

/// Draws one perturbation vector from the retained directions of `shape`.
pub fn sample_perturbation<R: Rng + ?Sized>(shape: &GeometricShape, scale: ScaleMode, rng: &mut R) -> Vec<f64> {
    let mut beta = alloc::vec![0.0; shape.dim()];
    add_perturbation(&mut beta, shape, scale, rng);
    beta
}

/// Adds a fresh perturbation to `target` in place.
pub fn add_perturbation<R: Rng + ?Sized>(
    target: &mut [f64],
    shape: &GeometricShape,
    scale: ScaleMode,
    rng: &mut R,
) {
    for (xi, &lambda) in shape.directions().zip(shape.retained_eigenvalues()) {
        let eps: f64 = rng.sample(StandardNormal);
        let w = eps * scale.apply(lambda);
        for (t, &x) in target.iter_mut().zip(xi) {
            *t += w * x;
        }
    }
}

/// Covariance of the perturbation law: `Σ_i s(λ_i)² ξ_i ξ_i^T`.
pub fn perturbation_covariance(shape: &GeometricShape, scale: ScaleMode) -> Matrix {
    shape.weighted_outer_sum(|l| {
        let s = scale.apply(l);
        s * s
    })
}

/// Generates `max(0, target - samples.len())` new rows.
///
/// Centers cycle over `samples` in order (new row `j` is centered on sample
/// `j mod n`), each with an independent perturbation. The input samples are
/// not modified or repeated in the output.
pub fn augment_class<R: Rng + ?Sized>(
    samples: &[&[f32]],
    shape: &GeometricShape,
    target_count: usize,
    scale: ScaleMode,
    rng: &mut R,
) -> Result<Vec<Vec<f32>>> {
    if samples.is_empty() {
        return Err(Error::EmptySource);
    }
    let dim = shape.dim();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
    }
    let needed = target_count.saturating_sub(samples.len());
    let mut out = Vec::with_capacity(needed);
    let mut buf = alloc::vec![0.0; dim];
    for j in 0..needed {
        let center = samples[j % samples.len()];
        for (b, &c) in buf.iter_mut().zip(center) {
            *b = c as f64;
        }
        add_perturbation(&mut buf, shape, scale, rng);
        out.push(buf.iter().map(|&v| v as f32).collect());
    }
    Ok(out)
}

/// Generates `count` rows around a single `center`.
pub fn sample_around<R: Rng + ?Sized>(
    center: &[f64],
    shape: &GeometricShape,
    count: usize,
    scale: ScaleMode,
    rng: &mut R,
) -> Vec<Vec<f32>> {
    (0..count)
        .map(|_| {
            let mut v = center.to_vec();
            add_perturbation(&mut v, shape, scale, rng);
            v.into_iter().map(|x| x as f32).collect()
        })
        .collect()
}

/// Augments every class present on a client to the plan's target using the
/// class's global shape. Original rows keep their order and come first;
/// generated rows carry the center's domain and are marked
/// [`RowOrigin::Perturbed`].
pub fn augment_single_domain(client: &EmbeddingSet, bank: &ShapeBank, plan: &AugmentPlan) -> Result<EmbeddingSet> {
    augment_local(client, bank, plan.target_count_per_class, plan)
}

fn augment_local(client: &EmbeddingSet, bank: &ShapeBank, target: usize, plan: &AugmentPlan) -> Result<EmbeddingSet> {
    if bank.dim() != client.dim() {
        return Err(Error::DimensionMismatch { expected: client.dim(), found: bank.dim() });
    }
    let index = client.class_index();
    for (class, rows) in index.iter().enumerate() {
        if !rows.is_empty() && bank.shape(class).is_none() {
            return Err(Error::MissingShape { class });
        }
    }
    let mut out = client.clone();
    for (class, rows) in index.iter().enumerate() {
        if rows.is_empty() || rows.len() >= target {
            continue;
        }
        let shape = bank.shape(class).ok_or(Error::MissingShape { class })?;
        let centers: Vec<&[f32]> = rows.iter().map(|&i| client.row(i)).collect();
        let mut rng = substream(plan.seed, &[STEP_LOCAL, class as u64]);
        let generated = augment_class(&centers, shape, target, plan.scale_mode, &mut rng)?;
        for (j, row) in generated.iter().enumerate() {
            let domain = client.domain(rows[j % rows.len()]);
            out.append_rows(core::slice::from_ref(row), class, domain, RowOrigin::Perturbed)?;
        }
    }
    Ok(out)
}

/// Two-step augmentation for clients in a multi-domain federation.
///
/// Step 1 augments local classes to `target_count_per_class` with the shared
/// class shape. Step 2 generates `per_prototype_count` rows around every
/// prototype of every class coming from a domain absent on this client; those
/// rows are tagged with the prototype's domain and marked
/// [`RowOrigin::PrototypeTransfer`].
pub fn augment_multi_domain(client: &EmbeddingSet, bank: &ShapeBank, plan: &AugmentPlan) -> Result<EmbeddingSet> {
    let mut out = augment_local(client, bank, plan.target_count_per_class, plan)?;
    let Some(prototypes) = bank.prototypes() else {
        let class = client.labels().first().map_or(0, |&l| l as usize);
        return Err(Error::MissingPrototype { class });
    };
    let local = client.present_domains();
    for p in prototypes {
        let Some(domain) = p.domain else { continue };
        if local.contains(&domain) {
            continue;
        }
        let shape = bank.shape(p.class).ok_or(Error::MissingShape { class: p.class })?;
        let mut rng = substream(plan.seed, &[STEP_PROTOTYPE, p.class as u64, domain as u64]);
        let rows = sample_around(&p.vector, shape, plan.per_prototype_count, plan.scale_mode, &mut rng);
        out.append_rows(&rows, p.class, domain, RowOrigin::PrototypeTransfer)?;
    }
    Ok(out)
}
