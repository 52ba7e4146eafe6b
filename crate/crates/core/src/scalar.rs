//! Scalar abstraction for the numeric core.
//!
//! All of the numeric machinery (expressions, NLP solver, reduction loop,
//! oracles) is generic over a floating-point scalar implementing [`Scalar`].
//! `f64` is the default everywhere and the only type exercised by the CLI;
//! `f32` compiles and is useful for quick experiments, but the shipped
//! tolerances assume double precision.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar used by the solver stack.
pub trait Scalar:
    'static
    + Send
    + Sync
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Serialize
    + DeserializeOwned
{
    /// Lossy conversion from `f64`, used for constants and tolerances.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Lossy conversion to `f64` for reporting and serialization helpers.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `T::from_f64_lossy` that reads well at call sites.
#[inline]
pub fn sc<T: Scalar>(v: f64) -> T {
    T::from_f64_lossy(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f64_constants() {
        let x: f64 = sc(0.05);
        assert_eq!(x, 0.05);
        let y: f32 = sc(1.5);
        assert_eq!(y, 1.5f32);
    }
}
