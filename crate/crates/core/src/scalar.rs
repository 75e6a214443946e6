//! Scalar abstraction for the numeric core.
//!
//! All algorithms are written against [`Scalar`] so the same code runs in
//! `f32` and `f64`. Constants and tolerances are stated as `f64` literals and
//! converted with [`from_f64`]; sampling (inputs, noise) is always performed
//! in `f64` and then narrowed, so the pseudo-random streams are identical
//! across scalar types.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the crate.
///
/// `RealField` supplies the field operations and elementary functions used by
/// the dense factorizations; the `num-traits` bounds supply literal
/// conversions. Infinities are needed for unbounded box constraints, which
/// `RealField` does not expose, hence the two extra items.
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    fn infinity() -> Self;
    fn neg_infinity() -> Self;
}

impl Scalar for f64 {
    fn infinity() -> Self {
        f64::INFINITY
    }
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
}

impl Scalar for f32 {
    fn infinity() -> Self {
        f32::INFINITY
    }
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
}

/// Converts an `f64` literal to the working scalar type.
///
/// Panics if the value is not representable, which cannot happen for the
/// finite literals used in this crate.
#[inline]
pub fn from_f64<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal not representable in scalar type")
}
