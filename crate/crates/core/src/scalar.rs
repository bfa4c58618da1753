//! Scalar abstraction shared by the market model, the learner and the metrics.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the numerical core is written against: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Arguments below this value make `exp` return exactly zero.
    fn exp_underflow() -> Self;
}

impl Real for f32 {
    fn exp_underflow() -> Self {
        -110.0
    }
}

impl Real for f64 {
    fn exp_underflow() -> Self {
        -746.0
    }
}
