//! Scalar abstraction for the numeric layers.
//!
//! Layers, optimizers and the evidential loss functions are written against
//! this trait so they instantiate at f32 or f64; the pipeline itself runs at
//! [`crate::Real`].

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable by the network and loss code.
pub trait Scalar:
    Float
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from a literal; panics only for values no float can
    /// represent, which no caller passes.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable as scalar")
    }

    /// Round-trip to f64 for reporting and serialization.
    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
