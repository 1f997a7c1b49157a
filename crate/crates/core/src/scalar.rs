use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the kernels are generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; integer-valued and dyadic inputs in range are exact.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    #[inline]
    fn of_i32(v: i32) -> Self {
        Self::from_i32(v).expect("i32 conversion")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().expect("f32 conversion")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
}
