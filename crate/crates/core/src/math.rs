//! Scalar and slice helpers that work without `std`.
//!
//! Transcendentals go through `libm` in every build so results do not depend
//! on whether the `std` feature is enabled.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Cosine of the angle between `a` and `b`, `None` if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na2 = dot(a, a);
    let nb2 = dot(b, b);
    if na2 == 0.0 || nb2 == 0.0 {
        return None;
    }
    // One rounding of the product keeps cos(v, v) at exactly 1.
    Some((dot(a, b) / sqrt(na2 * nb2)).clamp(-1.0, 1.0))
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    sqrt(var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: alloc::vec::Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn cosine_of_zero_is_none() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]), Some(1.0));
    }

    #[test]
    fn population_std_of_constant_is_zero() {
        assert_eq!(population_std(&[3.0, 3.0, 3.0]), 0.0);
        assert!((population_std(&[0.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
