//! Scalar abstraction so the same model/objective code runs in f32 for
//! training and in f64 for gradient and Taylor checks.

use num_traits::Float;

/// Floating-point element type for parameters, activations, and gradients.
pub trait Scalar:
    Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shorthand for converting an f64 constant into the active scalar type.
#[inline]
pub fn sc<S: Scalar>(x: f64) -> S {
    S::from_f64(x)
}
