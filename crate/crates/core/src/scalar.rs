//! Floating-point abstraction so the propagation engine can run in either
//! f64 (default) or f32 (to mirror GPU-style single-precision runs).
//!
//! Times, tolerances, and recorded observables always stay in f64; only the
//! state amplitudes and operator applications use the generic scalar.

use num_complex::Complex;
use num_traits::Float;

pub trait Real:
    Float + num_traits::NumAssign + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Unit roundoff of this precision, used as the series stopping threshold.
    const EPS: f64;
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    const EPS: f64 = f64::EPSILON;
    const NAME: &'static str = "double";

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const EPS: f64 = f32::EPSILON as f64;
    const NAME: &'static str = "single";

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Multiply by -i without a full complex multiplication.
#[inline(always)]
pub fn mul_neg_i<R: Real>(z: Complex<R>) -> Complex<R> {
    Complex::new(z.im, -z.re)
}

#[inline(always)]
pub fn c_from_f64<R: Real>(z: Complex<f64>) -> Complex<R> {
    Complex::new(R::from_f64(z.re), R::from_f64(z.im))
}

#[inline(always)]
pub fn c_to_f64<R: Real>(z: Complex<R>) -> Complex<f64> {
    Complex::new(z.re.to_f64(), z.im.to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn mul_neg_i_matches_complex_product() {
        let z = Complex64::new(0.3, -1.7);
        let direct = z * Complex64::new(0.0, -1.0);
        let fast = mul_neg_i(z);
        assert_eq!(direct, fast);
    }

    #[test]
    fn precision_names() {
        assert_eq!(<f64 as Real>::NAME, "double");
        assert_eq!(<f32 as Real>::NAME, "single");
        assert!(<f32 as Real>::EPS > <f64 as Real>::EPS);
    }
}
