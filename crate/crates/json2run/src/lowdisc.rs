//! Scaled k-dimensional Hammersley point sets.
//!
//! The point set places `n` points in the unit cube [0,1)^k. Coordinate 0 of
//! point `i` is the lattice fraction `i/n`; coordinate `j >= 1` is the
//! radical inverse of `i` in the j-th prime base (2, 3, 5, ...). Index
//! origin is `i = 0`, so the set always contains the all-zero corner point.
//! Points are mapped into a parameter box by an affine scale per coordinate;
//! the upper bound of each interval is approached but never attained.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LowdiscError {
    #[error("point index {index} is out of range for a set of {total} points")]
    IndexOutOfRange { index: u64, total: u64 },
    #[error("point has {point} coordinates but the box has {bounds} bounds")]
    DimensionMismatch { point: usize, bounds: usize },
}

/// Base-`base` digit reversal of `i` about the radix point:
/// i = sum(d_j * base^j) maps to sum(d_j * base^(-j-1)).
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    debug_assert!(base >= 2);
    let inv_base = 1.0 / base as f64;
    let mut value = 0.0;
    let mut digit_weight = inv_base;
    while i > 0 {
        value += (i % base) as f64 * digit_weight;
        i /= base;
        digit_weight *= inv_base;
    }
    value
}

/// The j-th prime, counting from `nth_prime(0) == 2`.
pub fn nth_prime(j: usize) -> u64 {
    let mut candidate: u64 = 2;
    let mut found = 0;
    loop {
        if is_prime(candidate) {
            if found == j {
                return candidate;
            }
            found += 1;
        }
        candidate += 1;
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// The i-th of `n` Hammersley points in `k` dimensions, inside [0,1)^k.
pub fn hammersley_point(i: u64, n: u64, k: usize) -> Result<Vec<f64>, LowdiscError> {
    assert!(k >= 1, "point dimension must be at least 1");
    if i >= n {
        return Err(LowdiscError::IndexOutOfRange { index: i, total: n });
    }
    let mut coords = Vec::with_capacity(k);
    coords.push(i as f64 / n as f64);
    for j in 1..k {
        coords.push(radical_inverse(i, nth_prime(j - 1)));
    }
    Ok(coords)
}

/// Affine map of a unit point into a box given as (min, max) per coordinate.
pub fn scale_point(point: &[f64], bounds: &[(f64, f64)]) -> Result<Vec<f64>, LowdiscError> {
    if point.len() != bounds.len() {
        return Err(LowdiscError::DimensionMismatch {
            point: point.len(),
            bounds: bounds.len(),
        });
    }
    Ok(point
        .iter()
        .zip(bounds)
        .map(|(p, (min, max))| min + p * (max - min))
        .collect())
}
