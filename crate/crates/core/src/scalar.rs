//! Scalar abstraction shared by the tensor, model and metric code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar usable for forward passes and pruning arithmetic.
///
/// Implemented for `f32` and `f64`. Checkpoints are always 32-bit on disk;
/// the pruning pipeline runs in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-or-rounding conversion from `f64`.
    fn from_f64_lossy(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// Narrowing conversion used for the on-disk representation.
    fn to_f32_storage(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }
    #[inline]
    fn to_f32_storage(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
    #[inline]
    fn to_f32_storage(self) -> f32 {
        self as f32
    }
}

/// Round a value through 32-bit storage precision.
#[inline]
pub fn through_f32<T: Scalar>(v: T) -> T {
    T::from_f64_lossy(v.to_f32_storage() as f64)
}
