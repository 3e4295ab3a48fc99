//! Class statistics and covariance geometry.
//!
//! A class's geometric shape is the leading eigenvectors of its covariance
//! together with the full eigenvalue spectrum; its size is the trace.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eigen::symmetric_eigen;
use crate::embedding::EmbeddingSet;
use crate::math;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Absolute tolerance on `|a_ij - a_ji|` accepted by [`shape_of`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Negative eigenvalues down to `-EIGEN_CLAMP_REL * trace` are set to zero.
pub const EIGEN_CLAMP_REL: f64 = 1e-10;
/// Orthonormality tolerance for retained eigenvectors.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// How the second-moment matrix of a class is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// `(1/n) Σ (x - μ)(x - μ)^T`.
    #[default]
    Centered,
    /// `(1/n) Σ x x^T`, without removing the mean.
    RawSecondMoment,
}

/// Count, mean and population covariance of one class on one client.
///
/// A zero count carries an all-zero mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl ClassStats {
    pub fn empty(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], covariance: Matrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Statistics of an arbitrary collection of rows.
    pub fn from_rows<'a, I>(rows: I, dim: usize, mode: CovarianceMode) -> Self
    where
        I: IntoIterator<Item = &'a [f32]>,
        I::IntoIter: Clone,
    {
        let rows = rows.into_iter();
        let mut count = 0u64;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            debug_assert_eq!(r.len(), dim);
            count += 1;
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64;
            }
        }
        if count == 0 {
            return Self::empty(dim);
        }
        let inv = 1.0 / count as f64;
        mean.iter_mut().for_each(|m| *m *= inv);

        let mut cov = Matrix::zeros(dim, dim);
        let mut centered = vec![0.0; dim];
        for r in rows {
            for ((c, &v), &m) in centered.iter_mut().zip(r).zip(&mean) {
                *c = match mode {
                    CovarianceMode::Centered => v as f64 - m,
                    CovarianceMode::RawSecondMoment => v as f64,
                };
            }
            for i in 0..dim {
                let ci = centered[i];
                if ci == 0.0 {
                    continue;
                }
                let row = &mut cov.row_mut(i)[i..];
                for (d, &cj) in row.iter_mut().zip(&centered[i..]) {
                    *d += ci * cj;
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[(i, j)] * inv;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Self { count, mean, covariance: cov }
    }
}

/// Statistics of the rows of `class` in `set`.
pub fn class_stats(set: &EmbeddingSet, class: usize, mode: CovarianceMode) -> Result<ClassStats> {
    let idx = set.rows_of_class(class);
    if idx.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    Ok(ClassStats::from_rows(idx.iter().map(|&i| set.row(i)), set.dim(), mode))
}

/// Statistics for every class `0..C` of `set`; empty classes get the zero
/// sentinel.
pub fn all_class_stats(set: &EmbeddingSet, mode: CovarianceMode) -> Vec<ClassStats> {
    set.class_index()
        .iter()
        .map(|idx| ClassStats::from_rows(idx.iter().map(|&i| set.row(i)), set.dim(), mode))
        .collect()
}

/// Leading eigenvectors and full spectrum of a covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricShape {
    dim: usize,
    /// `m × dim`, row `i` is the i-th principal direction.
    eigenvectors: Vec<f64>,
    /// All `dim` eigenvalues, non-increasing.
    eigenvalues: Vec<f64>,
}

impl GeometricShape {
    /// Builds a shape from raw parts, validating orthonormality, ordering and
    /// non-negativity.
    pub fn from_parts(dim: usize, eigenvectors: Vec<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if dim == 0 || eigenvalues.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: eigenvalues.len() });
        }
        if eigenvectors.len() % dim != 0 || eigenvectors.len() / dim > dim {
            return Err(Error::DimensionMismatch { expected: dim, found: eigenvectors.len() });
        }
        if !eigenvectors.iter().chain(&eigenvalues).all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec("eigenvalues must be non-increasing".into()));
        }
        if let Some(&neg) = eigenvalues.iter().find(|&&l| l < 0.0) {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: neg });
        }
        let shape = Self { dim, eigenvectors, eigenvalues };
        for i in 0..shape.m() {
            for j in i..shape.m() {
                let d = math::dot(shape.direction(i), shape.direction(j));
                let target = if i == j { 1.0 } else { 0.0 };
                if (d - target).abs() > ORTHONORMAL_TOL {
                    return Err(Error::InvalidSpec("eigenvectors are not orthonormal".into()));
                }
            }
        }
        Ok(shape)
    }

    /// Shape of a `dim`-dimensional distribution with zero spread.
    pub fn degenerate(dim: usize, m: usize) -> Self {
        let mut eigenvectors = vec![0.0; m * dim];
        for i in 0..m {
            eigenvectors[i * dim + i] = 1.0;
        }
        Self { dim, eigenvectors, eigenvalues: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of retained directions.
    pub fn m(&self) -> usize {
        self.eigenvectors.len() / self.dim
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.eigenvectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn directions(&self) -> impl Iterator<Item = &[f64]> {
        self.eigenvectors.chunks_exact(self.dim)
    }

    pub fn eigenvectors_flat(&self) -> &[f64] {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvalues of the retained directions.
    pub fn retained_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.m()]
    }

    /// `Σ_{i<m} λ_i ξ_i ξ_i^T`; equals the source covariance when `m = dim`.
    pub fn reconstruct(&self) -> Matrix {
        self.weighted_outer_sum(|l| l)
    }

    /// `Σ_{i<m} f(λ_i) ξ_i ξ_i^T`.
    pub fn weighted_outer_sum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (i, xi) in self.directions().enumerate() {
            out.add_outer(f(self.eigenvalues[i]), xi, xi);
        }
        out
    }

    /// Same directions with every eigenvalue multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.eigenvalues.iter_mut().for_each(|l| *l *= factor);
        s
    }

    /// Same shape keeping only the first `m` directions.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.m());
        Self {
            dim: self.dim,
            eigenvectors: self.eigenvectors[..m * self.dim].to_vec(),
            eigenvalues: self.eigenvalues.clone(),
        }
    }
}

/// Eigendecomposition of a symmetric covariance, keeping `m` directions.
///
/// Eigenvalues are sorted non-increasing; negative values within
/// `1e-10 · trace` of zero are clamped to zero. Each retained eigenvector is
/// oriented so that its first largest-magnitude component is positive.
pub fn shape_of(cov: &Matrix, m: usize) -> Result<GeometricShape> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch { expected: cov.rows(), found: cov.cols() });
    }
    let dim = cov.rows();
    if m == 0 || m > dim {
        return Err(Error::InvalidSpec(alloc::format!("m = {m} outside [1, {dim}]")));
    }
    if !cov.is_finite() {
        return Err(Error::NonFinite);
    }
    let (row, col, delta) = cov.max_asymmetry();
    if delta > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { row, col, delta });
    }

    let eig = symmetric_eigen(cov)?;
    let clamp = EIGEN_CLAMP_REL * cov.trace().abs();
    let mut eigenvalues = Vec::with_capacity(dim);
    for &l in eig.values.iter().rev() {
        if l >= 0.0 {
            eigenvalues.push(l);
        } else if l >= -clamp {
            eigenvalues.push(0.0);
        } else {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: l });
        }
    }

    let mut eigenvectors = Vec::with_capacity(m * dim);
    for k in 0..m {
        let col = dim - 1 - k;
        let start = eigenvectors.len();
        eigenvectors.extend((0..dim).map(|r| eig.vectors[(r, col)]));
        let v = &mut eigenvectors[start..];
        let mut pivot = 0;
        for (j, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(GeometricShape { dim, eigenvectors, eigenvalues })
}

/// Size of a distribution: the trace of its covariance.
pub fn size_of_covariance(cov: &Matrix) -> f64 {
    cov.trace()
}

/// Size of a distribution: the sum of all its eigenvalues.
pub fn size_of_shape(shape: &GeometricShape) -> f64 {
    shape.eigenvalues.iter().sum()
}

/// `Σ_i |<ξ_a^i, ξ_b^i>|` over index-aligned directions; lies in `[0, m]`.
pub fn shape_similarity(a: &GeometricShape, b: &GeometricShape) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, found: b.dim });
    }
    if a.m() != b.m() {
        return Err(Error::DimensionMismatch { expected: a.m(), found: b.m() });
    }
    // Cosine rather than a bare dot so self-similarity comes out as exactly m.
    Ok(a.directions().zip(b.directions()).map(|(x, y)| math::cosine(x, y).unwrap_or(0.0).abs()).sum())
}

/// [`shape_similarity`] divided by `m`, for comparisons across different `m`.
pub fn shape_similarity_normalized(a: &GeometricShape, b: &GeometricShape) -> Result<f64> {
    Ok(shape_similarity(a, b)? / a.m() as f64)
}

/// Class mean, optionally tagged with the domain it was computed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub class: usize,
    pub domain: Option<usize>,
    pub vector: Vec<f64>,
}

impl Prototype {
    pub fn new(class: usize, vector: Vec<f64>) -> Self {
        Self { class, domain: None, vector }
    }

    pub fn with_domain(mut self, domain: usize) -> Self {
        self.domain = Some(domain);
        self
    }
}

/// Mean of the rows of `class`.
pub fn prototype_of(set: &EmbeddingSet, class: usize) -> Result<Prototype> {
    let stats = class_stats_mean_only(set, class)?;
    Ok(Prototype::new(class, stats))
}

fn class_stats_mean_only(set: &EmbeddingSet, class: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; set.dim()];
    let mut n = 0usize;
    for i in 0..set.len() {
        if set.label(i) == class {
            n += 1;
            for (m, &v) in mean.iter_mut().zip(set.row(i)) {
                *m += v as f64;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyClass { class });
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// Cosine similarity of two prototypes.
pub fn class_similarity(a: &Prototype, b: &Prototype) -> Result<f64> {
    if a.vector.len() != b.vector.len() {
        return Err(Error::DimensionMismatch { expected: a.vector.len(), found: b.vector.len() });
    }
    math::cosine(&a.vector, &b.vector).ok_or(Error::ZeroVector)
}

/// Prototype, shape and count of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGeometry {
    pub count: u64,
    pub prototype: Vec<f64>,
    pub shape: GeometricShape,
}

impl ClassGeometry {
    pub fn from_stats(stats: &ClassStats, m: usize) -> Result<Self> {
        Ok(Self { count: stats.count, prototype: stats.mean.clone(), shape: shape_of(&stats.covariance, m)? })
    }

    pub fn size(&self) -> f64 {
        size_of_shape(&self.shape)
    }
}

/// Geometry of every class `0..C`; `None` for classes without rows.
pub fn per_class_geometry(set: &EmbeddingSet, m: usize, mode: CovarianceMode) -> Result<Vec<Option<ClassGeometry>>> {
    all_class_stats(set, mode)
        .iter()
        .map(|s| if s.count == 0 { Ok(None) } else { ClassGeometry::from_stats(s, m).map(Some) })
        .collect()
}
