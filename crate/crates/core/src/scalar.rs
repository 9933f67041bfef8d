//! Floating-point scalar abstraction: f32 or f64.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type for all in-memory math.
///
/// Everything that touches disk goes through [`Real::to_stored`] /
/// [`Real::from_stored`]: stored values are 32-bit floats, and downstream
/// math always uses the rounded value so that reconstruction is
/// bit-reproducible from a file.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_usize_(v: usize) -> Self {
        Self::from_usize(v).expect("usize fits in scalar")
    }

    fn from_f64_(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to scalar")
    }

    fn to_f64_(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Round to the 32-bit value that would be written to disk.
    fn to_stored(self) -> f32 {
        self.to_f64_() as f32
    }

    /// Widen a stored 32-bit value back to the working scalar (exact).
    fn from_stored(v: f32) -> Self {
        Self::from_f64_(v as f64)
    }

    /// Round through storage precision in one step.
    fn snap_to_stored(self) -> Self {
        Self::from_stored(self.to_stored())
    }
}

impl Real for f32 {}
impl Real for f64 {}
