//! Scalar abstraction shared by the deterministic and density code.
//!
//! Everything that is pure arithmetic (the SIR recursion, log-densities, the
//! log score) is written against [`Real`] so it runs on `f32` or `f64`. The
//! stochastic machinery (sampler, forecasting, backtests) is `f64` only.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the model code: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Natural log of the gamma function.
    #[inline]
    fn lgamma(self) -> Self {
        Self::lit(statrs::function::gamma::ln_gamma(self.to_f64().unwrap_or(f64::NAN)))
    }

    /// Standard normal CDF.
    #[inline]
    fn std_normal_cdf(self) -> Self {
        let x = self.to_f64().unwrap_or(f64::NAN);
        Self::lit(0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2))
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[inline]
pub fn inv_logit<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
