//! Float math shims.
//!
//! `f64`'s transcendental methods live in `std`, not `core`; this extension
//! trait routes them through `libm` so the crate builds without `std` and
//! produces identical bits under either feature set.

// Under `std` the inherent f64 methods shadow these, so the trait and its
// imports look unused; they are load-bearing for the no_std build.
#[cfg_attr(feature = "std", allow(dead_code))]
pub(crate) trait FloatExt {
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
}

impl FloatExt for f64 {
    #[inline]
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    #[inline]
    fn cos(self) -> f64 {
        libm::cos(self)
    }
    #[inline]
    fn sin(self) -> f64 {
        libm::sin(self)
    }
}
