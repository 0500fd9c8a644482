//! Floating-point element trait: the whole numeric core is generic over it.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Scalar element type of a [`crate::Tensor`]: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + NumCast + Default + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite f64 converts to any float scalar")
    }

    fn from_usize_lossy(v: usize) -> Self {
        <Self as NumCast>::from(v).expect("usize converts to any float scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
