//! Scalar abstraction shared by the deterministic solvers.

use std::fmt::{Debug, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point type the ODE solvers, oracles and model tables are generic over.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only for values the type cannot represent at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar not convertible to f64")
    }

    /// Machine epsilon as an `f64`.
    fn eps64() -> f64;
}

impl Scalar for f32 {
    fn eps64() -> f64 {
        f32::EPSILON as f64
    }
}

impl Scalar for f64 {
    fn eps64() -> f64 {
        f64::EPSILON
    }
}
