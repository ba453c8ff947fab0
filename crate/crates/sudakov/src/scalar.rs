//! Dual arithmetic backends behind one trait.
//!
//! Geometry and LP decisions in this crate are discrete (which pieces are
//! active, which arc enters the basis), so the two supported backends differ
//! only in how ties are decided: `BigRational` is exact with zero tolerances,
//! `f64` uses a fixed comparison tolerance (1e-9) and a coarser quantization
//! tolerance (1e-7) for keys derived from geometry. Everything downstream is
//! generic over [`Scalar`]; nothing else in the crate mentions the backend.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

/// Abstract field of scalars with a decision tolerance.
///
/// `EXACT = true` backends must implement every comparison exactly and return
/// zero tolerances; inexact backends choose tolerances once, globally, so that
/// all modules agree on what "equal" means.
pub trait Scalar:
    Clone
    + Debug
    + Display
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_int(n: i64) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    /// Exact embedding of a finite double (used by seeded samplers so that
    /// both backends see identical coordinates).
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;

    /// Parse `p/q` (integers) or a plain decimal such as `-1.25`.
    fn parse_text(text: &str) -> Result<Self, String>;

    /// Deterministic textual form for reports: `p/q` for rationals, the
    /// shortest round-trip decimal for doubles.
    fn render(&self) -> String;

    /// Comparison tolerance (0 when exact).
    fn tol() -> Self;
    /// Quantization tolerance for geometric keys (0 when exact).
    fn coarse_tol() -> Self;

    fn abs(&self) -> Self;
    fn is_zero(&self) -> bool;
    fn total_cmp(&self, other: &Self) -> Ordering;

    /// |a − b| ≤ tol.
    fn approx_eq(&self, other: &Self) -> bool {
        (self.clone() - other.clone()).abs() <= Self::tol()
    }
    /// a ≤ b + tol.
    fn approx_le(&self, other: &Self) -> bool {
        self.clone() - other.clone() <= Self::tol()
    }
    /// a ≥ b − tol.
    fn approx_ge(&self, other: &Self) -> bool {
        other.clone() - self.clone() <= Self::tol()
    }

    /// Snap to the coarse grid for use in class keys. Identity when exact.
    fn quantize(&self) -> Self;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_int(n: i64) -> Self {
        n as f64
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }

    fn parse_text(text: &str) -> Result<Self, String> {
        parse_ratio_text(text).map(|(n, d)| {
            let nf = bigint_to_f64(&n);
            let df = bigint_to_f64(&d);
            nf / df
        })
    }

    fn render(&self) -> String {
        format!("{self}")
    }

    fn tol() -> Self {
        1e-9
    }
    fn coarse_tol() -> Self {
        1e-7
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn total_cmp(&self, other: &Self) -> Ordering {
        f64::total_cmp(self, other)
    }

    fn quantize(&self) -> Self {
        (self / 1e-7).round() * 1e-7
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        <BigRational as num::One>::one()
    }
    fn from_int(n: i64) -> Self {
        BigRational::from(BigInt::from(n))
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).expect("finite double")
    }
    fn to_f64(&self) -> f64 {
        num::ToPrimitive::to_f64(self).unwrap_or_else(|| {
            // Extremely large numerators can overflow to_f64's fast path;
            // fall back to a manual division of leading digits.
            let n = bigint_to_f64(self.numer());
            let d = bigint_to_f64(self.denom());
            n / d
        })
    }

    fn parse_text(text: &str) -> Result<Self, String> {
        parse_ratio_text(text).map(|(n, d)| BigRational::new(n, d))
    }

    fn render(&self) -> String {
        if self.denom() == &BigInt::from(1) {
            format!("{}", self.numer())
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }

    fn tol() -> Self {
        <BigRational as Zero>::zero()
    }
    fn coarse_tol() -> Self {
        <BigRational as Zero>::zero()
    }

    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn total_cmp(&self, other: &Self) -> Ordering {
        Ord::cmp(self, other)
    }

    fn quantize(&self) -> Self {
        self.clone()
    }
}

fn bigint_to_f64(v: &BigInt) -> f64 {
    v.to_f64().unwrap_or(if v.is_negative() {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    })
}

/// Parse `p/q` or a decimal literal into an exact integer pair (num, den).
///
/// Accepted: optional sign, digits, optionally `/` + unsigned digits, or
/// digits with one `.` fraction part. No exponents — inputs are text files
/// written by people.
fn parse_ratio_text(text: &str) -> Result<(BigInt, BigInt), String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty number".to_string());
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num
            .trim()
            .parse()
            .map_err(|_| format!("bad numerator `{num}`"))?;
        let d: BigInt = den
            .trim()
            .parse()
            .map_err(|_| format!("bad denominator `{den}`"))?;
        if d.is_zero() {
            return Err(format!("zero denominator in `{s}`"));
        }
        return Ok((n, d));
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let ok_digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if !ok_digits(int_part) || (!frac_part.is_empty() && !ok_digits(frac_part)) {
        return Err(format!("bad number `{s}`"));
    }
    let digits = format!("{int_part}{frac_part}");
    let num: BigInt = digits.parse().map_err(|_| format!("bad number `{s}`"))?;
    let mut den = BigInt::from(1);
    for _ in 0..frac_part.len() {
        den *= 10;
    }
    Ok((BigInt::from(sign) * num, den))
}
