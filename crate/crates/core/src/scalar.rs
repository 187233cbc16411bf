//! Scalar abstraction shared by every numeric kernel.
//!
//! Grids are stored in `T` (`f32` on disk, `f64` available for reference
//! runs). Reductions always accumulate in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type of grids and stacks: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or accumulator.
    #[inline]
    fn of(x: f64) -> Self {
        // from_f64 never fails for f32/f64; it rounds or saturates to inf.
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    /// Widening conversion used by accumulators.
    #[inline]
    fn wide(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Raw bit pattern widened to `u64`, used for total ordering of channels.
    fn bit_key(self) -> u64;
}

impl Scalar for f32 {
    #[inline]
    fn bit_key(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    #[inline]
    fn bit_key(self) -> u64 {
        self.to_bits()
    }
}

/// `max(x, 0)` that never returns negative zero.
#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}
