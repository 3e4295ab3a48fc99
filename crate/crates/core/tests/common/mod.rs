#![allow(dead_code)]

use geocal_core::rng::substream;
use geocal_core::{EmbeddingSet, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

/// Random PSD matrix `A Aᵀ / k` with `A` of size `p × k`.
pub fn random_psd(p: usize, k: usize, seed: u64) -> Matrix {
    let mut rng = substream(seed, &[0xA11]);
    let a: Vec<f64> = (0..p * k).map(|_| rng.sample(StandardNormal)).collect();
    let mut m = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] = (0..k).map(|t| a[i * k + t] * a[j * k + t]).sum::<f64>() / k as f64;
        }
    }
    m
}

pub fn random_rows(n: usize, p: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = substream(seed, &[0xB22]);
    (0..n)
        .map(|_| (0..p).map(|j| rng.sample::<f64, _>(StandardNormal) as f32 * (1.0 + j as f32) + 0.5).collect())
        .collect()
}

pub fn set_from_rows(rows: &[Vec<f32>], labels: &[u16], num_classes: usize) -> EmbeddingSet {
    let p = rows.first().map_or(1, Vec::len);
    let data = rows.iter().flatten().copied().collect();
    EmbeddingSet::single_domain(p, data, labels.to_vec(), num_classes).unwrap()
}

/// Straightforward two-pass population covariance.
pub fn two_pass_covariance(rows: &[Vec<f32>]) -> (Vec<f64>, Matrix) {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            mean[j] += r[j] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += (r[i] as f64 - mean[i]) * (r[j] as f64 - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

pub fn random_rotation(p: usize, seed: u64) -> Matrix {
    geocal_core::synth::random_orthonormal(p, &mut substream(seed, &[0xC33]))
}

/// Empirical covariance of `f64` rows (population normalization).
pub fn empirical_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mut mean = vec![0.0; p];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut cov = Matrix::zeros(p, p);
    for r in rows {
        for i in 0..p {
            for j in 0..p {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}
