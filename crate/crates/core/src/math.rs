//! Float math routed through `libm`.
//!
//! `core` has no transcendental methods on `f64`, and using one libm
//! implementation everywhere keeps results bit-identical between the
//! `no_std` library and its std-linked tests.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// 10^(db/10), the power ratio for a dB value.
#[inline]
pub fn db_to_power(db: f64) -> f64 {
    powf(10.0, db / 10.0)
}

/// 10 * log10(ratio), a power ratio in dB.
#[inline]
pub fn power_to_db(ratio: f64) -> f64 {
    10.0 * log10(ratio)
}
