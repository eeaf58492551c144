//! Floating-point abstraction shared by every numeric routine in the crate.
//!
//! Circuits are evaluated in log space. `Scalar` is implemented for `f32`
//! and `f64`; the crate root exposes `f64` aliases for the common types.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar used for log-parameters, log-values and flows.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Tolerance on `|sum_c exp(phi_{n,c}) - 1|` for a sum node to count as normalized.
    const NORM_TOL: f64;

    /// Converts an `f64` constant; every `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    const NORM_TOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const NORM_TOL: f64 = 1e-5;
}

/// `log(exp(a) + exp(b))` with exact `-inf` handling.
#[inline]
pub fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    let ninf = T::neg_infinity();
    if a == ninf {
        return b;
    }
    if b == ninf {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Max-shifted log-sum-exp. An empty or all-`-inf` input yields `-inf`.
pub fn log_sum_exp<T: Scalar, I>(values: I) -> T
where
    I: IntoIterator<Item = T>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let total: T = iter.map(|v| (v - max).exp()).sum();
    max + total.ln()
}
