//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All model math is written against [`Real`], which bundles nalgebra's
//! `RealField` with the random-variate generators the sampler needs. `f64`
//! is the working precision used by the crate-root aliases; `f32` is
//! supported for memory-bound post-processing.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Largest Poisson rate handed to the count generator. Beyond this the
/// draw would not fit in a `u64`.
pub const MAX_POISSON_RATE: f64 = 1.0e18;

pub trait Real:
    RealField + Copy + Default + Debug + Display + Serialize + DeserializeOwned + Send + Sync + 'static
{
    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Uniform on the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma variate in the shape–rate parameterization.
    fn gamma_draw<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self;

    fn normal<R: Rng + ?Sized>(mean: Self, var: Self, rng: &mut R) -> Self {
        mean + var.sqrt() * Self::std_normal(rng)
    }

    /// Inverse-gamma variate, shape–rate: `1 / Gamma(shape, rate)`.
    fn inv_gamma<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self {
        Self::one() / Self::gamma_draw(shape, rate, rng)
    }

    fn poisson<R: Rng + ?Sized>(rate: Self, rng: &mut R) -> u64 {
        let rate = rate.to_f64();
        if !(rate > 0.0) {
            return 0;
        }
        let rate = rate.min(MAX_POISSON_RATE);
        let d = Poisson::new(rate).expect("positive finite Poisson rate");
        let y: f64 = d.sample(rng);
        y as u64
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            #[inline]
            fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.sample(rand_distr::Open01)
            }

            fn gamma_draw<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self {
                let d = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
                d.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
