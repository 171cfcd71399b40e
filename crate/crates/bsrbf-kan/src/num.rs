//! Scalar abstraction.
//!
//! All numeric code in this crate is generic over a [`Real`] scalar so the
//! same kernels run in `f32` or `f64`. The crate root exports concrete
//! `f64`-backed aliases for the common types; pick `f32` explicitly when
//! memory or throughput matters more than precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the crate.
///
/// This is a trait alias: it adds no methods of its own, it just bundles the
/// bounds every kernel needs (IEEE float ops, conversions from literals,
/// compound assignment, serialization, and thread-safety).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

macro_rules! impl_real {
    ($($t:ty),*) => {
        $(impl Real for $t {})*
    };
}

impl_real!(f32, f64);

/// Convert an `f64` literal/constant into the active scalar type.
///
/// Rounds once when `F = f32`; exact when `F = f64`. Use for constants and
/// hyperparameters, not for data paths that should stay in `F`.
#[inline]
pub fn real<F: Real>(x: f64) -> F {
    // f64 -> f32 conversion is total (saturates to +/-inf), so this cannot
    // fail for the scalar types this crate admits.
    F::from_f64(x).expect("f64 constant must convert into the scalar type")
}

/// Lossy view of a scalar as `f64` (exact for f32 and f64).
#[inline]
pub fn to_f64<F: Real>(x: F) -> f64 {
    x.to_f64().expect("scalar must convert to f64")
}
