//! Shared test support: independent oracles and frozen reference values.
//!
//! Everything in here is deliberately written against primitive data
//! (`&[Vec<f64>]`, `BigRational` slices, adjacency lists) rather than library
//! types, and uses the most naive algorithm available — exhaustive loops,
//! permutation enumeration, breadth-first closures — so that library results
//! are checked against genuinely independent computations. Constants are
//! frozen here once and referenced by the test suites.

#![allow(dead_code)] // each integration-test crate uses a different subset

pub mod oracles;

use num::BigRational;
use num::bigint::BigInt;

/// Build an exact rational from an integer pair.
pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact dot product of rational vectors.
pub fn rdot(a: &[BigRational], b: &[BigRational]) -> BigRational {
    assert_eq!(a.len(), b.len());
    let mut acc = BigRational::from(BigInt::from(0));
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
