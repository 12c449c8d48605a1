//! Scalar abstraction: every solver in this crate is generic over the
//! floating-point type through [`Real`].

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by all solvers: `f32` or `f64`.
pub trait Real: nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + std::iter::Sum<Self> {
    /// Lift an `f64` constant into the scalar type.
    #[inline]
    fn cst(x: f64) -> Self {
        Self::from_f64(x).expect("constant not representable in scalar type")
    }

    /// Lossy view as `f64`, for reporting and formatting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
