//! Scalar abstraction for the generic core: f32 or f64.

use std::iter::Sum;

/// Floating-point scalar for the algebraic core.
///
/// `nalgebra::RealField` supplies the transcendental methods, `FloatConst`
/// the usual constants, `FromPrimitive` the literal conversions.
pub trait Real:
    nalgebra::RealField
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::FloatConst
    + Copy
    + Default
    + Sum<Self>
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an f64 literal into the generic scalar.
#[inline]
pub fn r<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal must convert into the scalar type")
}

/// Converts a usize into the generic scalar.
#[inline]
pub fn ru<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("usize must convert into the scalar type")
}

/// e^{i t} as a generic complex number.
#[inline]
pub fn cis<T: Real>(t: T) -> num_complex::Complex<T> {
    num_complex::Complex::new(t.cos(), t.sin())
}

/// Modulus of a generic complex number.
#[inline]
pub fn cmod<T: Real>(z: num_complex::Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}
