//! Scalar backends: exact rationals and `f64`.

use num::BigRational;
use num_traits::{Signed, ToPrimitive};
use std::fmt::{Debug, Display};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Exact rational scalar used throughout the crate.
pub type Q = BigRational;

/// Build a rational from an integer pair. Panics if `den == 0`.
pub fn q(num: i64, den: i64) -> Q {
    Q::new(num.into(), den.into())
}

/// Build a rational from an integer.
pub fn qi(n: i64) -> Q {
    Q::from_integer(n.into())
}

/// Scalar backend for solution values.
///
/// `Q` gives exact arithmetic where the datum supports it; `f64` covers
/// black-box data and fast approximate sweeps. `EXACT` lets datum code refuse
/// operations (quadrature, finite differences) that would silently launder a
/// float into an "exact" result.
pub trait Value:
    Clone
    + PartialOrd
    + Signed
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const EXACT: bool;

    fn from_q(x: &Q) -> Self;

    /// `None` for exact backends: a float has no faithful exact reading here.
    fn from_f64(x: f64) -> Option<Self>;

    fn approx_f64(&self) -> f64;
}

impl Value for Q {
    const EXACT: bool = true;

    fn from_q(x: &Q) -> Self {
        x.clone()
    }

    fn from_f64(_x: f64) -> Option<Self> {
        None
    }

    fn approx_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Value for f64 {
    const EXACT: bool = false;

    fn from_q(x: &Q) -> Self {
        ToPrimitive::to_f64(x).unwrap_or(f64::NAN)
    }

    fn from_f64(x: f64) -> Option<Self> {
        Some(x)
    }

    fn approx_f64(&self) -> f64 {
        *self
    }
}

/// `base^exp` by binary exponentiation; exponents here are small (tree depths).
pub fn pow_u<V: Value>(base: &V, mut exp: u32) -> V {
    let mut acc = V::one();
    let mut sq = base.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * sq.clone();
        }
        sq = sq.clone() * sq;
        exp >>= 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pow_u_matches_repeated_multiplication() {
        let half = q(1, 2);
        assert_eq!(pow_u(&half, 0), qi(1));
        assert_eq!(pow_u(&half, 5), q(1, 32));
        assert_eq!(pow_u(&2.0f64, 10), 1024.0);
    }

    #[test]
    fn exact_backend_refuses_floats() {
        assert!(Q::from_f64(0.5).is_none());
        assert_eq!(f64::from_f64(0.5), Some(0.5));
    }
}
