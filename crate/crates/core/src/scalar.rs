//! Scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real floating point type the engine is generic over (`f32` or `f64`).
///
/// Tolerances quoted throughout the crate (1e-12 and tighter) assume `f64`;
/// `f32` instantiations work but only reach single precision.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + rustfft::FftNum
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    /// Conversion from a count or index.
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex value over the crate scalar.
pub type Cplx<T> = Complex<T>;

/// `10·log10(x)`, the power-to-dB conversion used by maps and metrics.
pub fn power_db<T: Real>(x: T) -> T {
    T::lit(10.0) * x.log10()
}

/// Hermitian inner product `aᴴ b = Σ conj(a_m)·b_m`.
pub fn inner<T: Real>(a: &[Cplx<T>], b: &[Cplx<T>]) -> Cplx<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(Cplx::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}
