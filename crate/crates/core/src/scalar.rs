//! Numeric traits shared by the estimators and the trainers.
//!
//! Estimators that only add, multiply and divide are written against
//! [`Field`], so they run unchanged on `f32`, `f64` or an exact rational
//! type. Anything that needs `exp`/`ln` (schedules, sigmoid, training) is
//! written against [`Scalar`], which adds [`num_traits::Float`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Arithmetic needed by the plug-in and IPW estimators.
pub trait Field: Num + Signed + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Field for T where T: Num + Signed + Copy + PartialOrd + FromPrimitive + Debug + Send + Sync + 'static {}

/// Floating point scalar used by training, calibration and simulation.
pub trait Scalar:
    Field + Float + ToPrimitive + Display + Sum + Serialize + DeserializeOwned + Default
{
}

impl<T> Scalar for T where
    T: Field + Float + ToPrimitive + Display + Sum + Serialize + DeserializeOwned + Default
{
}

/// Converts an `f64` literal into the scalar type.
///
/// Panics only if the target type cannot represent finite `f64` values,
/// which never happens for the float and rational types used here.
#[inline]
pub fn lit<F: FromPrimitive>(x: f64) -> F {
    F::from_f64(x).expect("literal not representable in scalar type")
}

#[inline]
pub fn from_usize<F: FromPrimitive>(n: usize) -> F {
    F::from_usize(n).expect("count not representable in scalar type")
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<F: Float>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Binary cross-entropy of a logit against a 0/1 label, computed without
/// forming the probability (`max(z,0) - z*y + ln(1 + e^-|z|)`).
#[inline]
pub fn bce_with_logit<F: Float>(z: F, y: F) -> F {
    z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn to_f64<F: ToPrimitive>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_symmetric_and_saturates_without_nan() {
        for &z in &[-800.0f64, -3.0, 0.0, 2.5, 800.0] {
            let s = sigmoid(z);
            assert!(s.is_finite());
            assert!((s + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn bce_matches_naive_form() {
        for &(z, y) in &[(0.3f64, 1.0), (-1.7, 0.0), (4.0, 0.0), (-2.0, 1.0)] {
            let p = sigmoid(z);
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(z, y) - naive).abs() < 1e-12);
        }
    }
}
