//! Synthetic anisotropic Gaussian mixtures with known per-class geometry.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSet;
use crate::geometry::GeometricShape;
use crate::math;
use crate::matrix::Matrix;
use crate::rng::substream;
use crate::{Error, Result};

/// Eigenvalue profile `leading · decay^k + floor`, `k = 0..P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spectrum {
    pub leading: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for Spectrum {
    fn default() -> Self {
        Self { leading: 1.0, decay: 0.7, floor: 0.01 }
    }
}

impl Spectrum {
    pub fn values(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|k| self.leading * math::powf(self.decay, k as f64) + self.floor).collect()
    }
}

/// How covariance eigenbases relate across classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    /// Every class uses one basis.
    Shared,
    /// Every class draws its own random basis.
    #[default]
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub num_domains: usize,
    /// Norm of each class mean.
    pub mean_spread: f64,
    /// Norm of each domain's additive mean offset (domain 0 has none).
    pub domain_shift: f64,
    pub spectrum: Spectrum,
    pub family: CovarianceFamily,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 16,
            num_domains: 1,
            mean_spread: 3.0,
            domain_shift: 0.0,
            spectrum: Spectrum::default(),
            family: CovarianceFamily::Rotated,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.num_domains == 0 {
            return Err(Error::InvalidSpec("num_classes, dim and num_domains must be >= 1".into()));
        }
        let s = &self.spectrum;
        let finite = [self.mean_spread, self.domain_shift, s.leading, s.decay, s.floor].iter().all(|v| v.is_finite());
        if !finite || s.leading < 0.0 || s.decay < 0.0 || s.floor < 0.0 || self.mean_spread < 0.0 || self.domain_shift < 0.0 {
            return Err(Error::InvalidSpec("mixture parameters must be finite and non-negative".into()));
        }
        Ok(())
    }
}

const TAG_MEAN: u64 = 1;
const TAG_OFFSET: u64 = 2;
const TAG_BASIS: u64 = 3;

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    spec: MixtureSpec,
    means: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
    /// Per class: rows are eigenvectors, ordered like `eigenvalues`.
    bases: Vec<Matrix>,
    eigenvalues: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.dim;
        let means = (0..spec.num_classes)
            .map(|c| random_direction(p, &mut substream(spec.seed, &[TAG_MEAN, c as u64]), spec.mean_spread))
            .collect();
        let offsets = (0..spec.num_domains)
            .map(|d| {
                if d == 0 {
                    vec![0.0; p]
                } else {
                    random_direction(p, &mut substream(spec.seed, &[TAG_OFFSET, d as u64]), spec.domain_shift)
                }
            })
            .collect();
        let bases = (0..spec.num_classes)
            .map(|c| {
                let tag = match spec.family {
                    CovarianceFamily::Shared => 0,
                    CovarianceFamily::Rotated => c as u64,
                };
                random_orthonormal(p, &mut substream(spec.seed, &[TAG_BASIS, tag]))
            })
            .collect();
        Ok(Self { spec, means, offsets, bases, eigenvalues: spec.spectrum.values(p) })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn mean(&self, class: usize, domain: usize) -> Vec<f64> {
        self.means[class].iter().zip(&self.offsets[domain]).map(|(a, b)| a + b).collect()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Ground-truth covariance of `class` (identical in every domain).
    pub fn covariance(&self, class: usize) -> Matrix {
        let p = self.spec.dim;
        let mut cov = Matrix::zeros(p, p);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let v = self.bases[class].row(k);
            cov.add_outer(lam, v, v);
        }
        cov
    }

    /// Ground-truth shape keeping the `m` leading directions.
    pub fn shape(&self, class: usize, m: usize) -> Result<GeometricShape> {
        let m = m.min(self.spec.dim);
        let vectors = self.bases[class].as_slice()[..m * self.spec.dim].to_vec();
        GeometricShape::from_parts(self.spec.dim, vectors, self.eigenvalues.clone())
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, class: usize, domain: usize, rng: &mut R) -> Vec<f64> {
        let mut x = self.mean(class, domain);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let a = math::sqrt(lam) * z;
            for (xi, &v) in x.iter_mut().zip(self.bases[class].row(k)) {
                *xi += a * v;
            }
        }
        x
    }

    /// Draws `counts[d][c]` rows of class `c` in domain `d`. Every
    /// `(domain, class)` cell has its own random stream.
    pub fn sample_set(&self, counts: &[Vec<usize>], seed: u64) -> Result<EmbeddingSet> {
        if counts.len() != self.spec.num_domains {
            return Err(Error::DimensionMismatch { expected: self.spec.num_domains, found: counts.len() });
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for (d, per_class) in counts.iter().enumerate() {
            if per_class.len() != self.spec.num_classes {
                return Err(Error::DimensionMismatch { expected: self.spec.num_classes, found: per_class.len() });
            }
            for (c, &n) in per_class.iter().enumerate() {
                let mut rng = substream(seed, &[d as u64, c as u64]);
                for _ in 0..n {
                    data.extend(self.sample_row(c, d, &mut rng).into_iter().map(|v| v as f32));
                    labels.push(c as u16);
                    domains.push(d as u16);
                }
            }
        }
        EmbeddingSet::new(self.spec.dim, data, labels, domains, self.spec.num_classes, self.spec.num_domains)
    }

    /// `per_class` rows of every class in every domain.
    pub fn sample_balanced(&self, per_class: usize, seed: u64) -> Result<EmbeddingSet> {
        let counts = vec![vec![per_class; self.spec.num_classes]; self.spec.num_domains];
        self.sample_set(&counts, seed)
    }
}

fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R, norm: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = math::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x * norm / n).collect();
        }
    }
}

/// Uniformly random orthonormal basis (rows) by Gram-Schmidt on Gaussian
/// vectors, re-orthogonalized twice for stability.
pub fn random_orthonormal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for u in &rows {
                let d = math::dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = math::norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            rows.push(v);
        }
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    Matrix::from_rows(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_basis() {
        let q = random_orthonormal(7, &mut substream(3, &[]));
        let g = q.matmul(&q.transpose());
        assert!(g.frobenius_distance(&Matrix::identity(7)) < 1e-12);
    }

    #[test]
    fn shared_family_has_equal_covariances() {
        let spec = MixtureSpec { family: CovarianceFamily::Shared, dim: 5, num_classes: 3, ..MixtureSpec::default() };
        let g = GaussianMixture::new(spec).unwrap();
        assert!(g.covariance(0).frobenius_distance(&g.covariance(2)) < 1e-12);
        let rot = GaussianMixture::new(MixtureSpec { family: CovarianceFamily::Rotated, ..spec }).unwrap();
        assert!(rot.covariance(0).frobenius_distance(&rot.covariance(2)) > 1e-3);
    }

    #[test]
    fn trace_matches_spectrum() {
        let g = GaussianMixture::new(MixtureSpec { dim: 6, ..MixtureSpec::default() }).unwrap();
        let total: f64 = g.eigenvalues().iter().sum();
        assert!((g.covariance(1).trace() - total).abs() < 1e-12);
    }

    #[test]
    fn sample_set_counts_and_determinism() {
        let g = GaussianMixture::new(MixtureSpec { num_domains: 2, domain_shift: 1.0, ..MixtureSpec::default() }).unwrap();
        let a = g.sample_balanced(4, 9).unwrap();
        assert_eq!(a.len(), 2 * 10 * 4);
        assert_eq!(a.class_counts(), vec![8; 10]);
        assert_eq!(a.data(), g.sample_balanced(4, 9).unwrap().data());
    }
}
