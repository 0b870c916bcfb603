//! The quadratic (biweight) kernel family.
//!
//! `K₀(s) = (15/16)(1 - s)²` for `0 ≤ s < 1` and zero otherwise. The univariate
//! kernel is `H(v) = K₀(v²)` and the radial multivariate kernel is
//! `K(u) = K₀(‖u‖²)`. Support is half open: `|v| = 1` evaluates to zero.

use crate::error::{Result, SdrError};

/// Peak value `K₀(0)`.
pub const K0_AT_ZERO: f64 = 15.0 / 16.0;

/// Marker for the fixed kernel family; bandwidths are passed per call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelConfig;

/// Radial profile `K₀(s)` evaluated at a squared radius `s`.
#[inline]
pub fn k0(s: f64) -> f64 {
    if (0.0..1.0).contains(&s) {
        let t = 1.0 - s;
        K0_AT_ZERO * t * t
    } else {
        0.0
    }
}

/// Univariate quadratic kernel `H(v)`.
#[inline]
pub fn h_kernel(v: f64) -> f64 {
    k0(v * v)
}

#[inline]
pub(crate) fn check_bandwidth(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(SdrError::InvalidBandwidth(b))
    }
}

/// Scaled kernel `H_b(v) = H(v / b) / b`.
pub fn h_scaled(v: f64, b: f64) -> Result<f64> {
    check_bandwidth(b)?;
    Ok(h_kernel(v / b) / b)
}

/// Multivariate scaled kernel `K_h(u) = h^{-d} K₀(‖u / h‖²)`.
pub fn k_multi(u: &[f64], h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    if u.is_empty() {
        return Err(SdrError::InvalidDimension("kernel argument must be non-empty"));
    }
    let s: f64 = u.iter().map(|x| x * x).sum::<f64>() / (h * h);
    Ok(k0(s) * libm::pow(h, -(u.len() as f64)))
}

/// `∫_{ℝ^m} K₀(‖v‖²) dv` in closed form.
///
/// The radial integral `∫₀¹ (1 - r²)² r^{m-1} dr` equals `8 / (m(m+2)(m+4))`,
/// and the unit sphere in ℝ^m has surface area `2π^{m/2} / Γ(m/2)`.
pub fn ball_kernel_mass(m: usize) -> Result<f64> {
    if m < 1 {
        return Err(SdrError::InvalidDimension("kernel mass needs m >= 1"));
    }
    let mf = m as f64;
    let surface = 2.0 * libm::pow(core::f64::consts::PI, mf / 2.0) / libm::tgamma(mf / 2.0);
    let radial = 8.0 / (mf * (mf + 2.0) * (mf + 4.0));
    Ok(K0_AT_ZERO * surface * radial)
}
