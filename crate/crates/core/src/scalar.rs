//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is written against [`Real`], which
//! bundles the matrix-algebra requirements (`nalgebra::RealField`) with
//! casting and the handful of random draws the samplers need. `f32` and
//! `f64` implement it; `f64` is the default precision used by the CLI and
//! the simulation harness.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Floating-point scalar usable by all numeric kernels in this crate.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
    /// Lossy cast from `f64`, for constants and tolerances.
    fn approx(x: f64) -> Self;

    /// Lossy cast to `f64`, for reporting and special functions.
    fn to_f64_lossy(self) -> f64;

    /// One standard-normal draw.
    fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from Gamma(shape, scale).
    fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self;

    /// One uniform draw from the open interval (0, 1).
    fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn approx(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, shape: Self, scale: Self) -> Self {
                Gamma::new(shape, scale)
                    .expect("gamma parameters must be positive and finite")
                    .sample(rng)
            }

            #[inline]
            fn sample_open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rand_distr::Open01.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn casts_round_trip() {
        assert_eq!(<f64 as Real>::approx(1.5), 1.5);
        assert_eq!(<f32 as Real>::approx(1.5), 1.5f32);
        assert_eq!(1.25f32.to_f64_lossy(), 1.25);
    }

    #[test]
    fn draws_work_for_both_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: f32 = Real::sample_standard_normal(&mut rng);
        let b: f64 = Real::sample_standard_normal(&mut rng);
        assert!(a.is_finite() && b.is_finite());
        let g: f64 = Real::sample_gamma(&mut rng, 2.0, 0.5);
        assert!(g > 0.0);
        let u: f64 = Real::sample_open01(&mut rng);
        assert!(u > 0.0 && u < 1.0);
    }
}
