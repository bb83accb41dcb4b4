//! Integral of an SG lobe over an angular rectangle, and its normalized
//! sigmoid-product approximation.
//!
//! Directions are parameterized in the lobe frame `(t, b, ξ)` by standard
//! spherical angles whose origin puts the lobe axis at `(θ, φ) = (π/2, π/2)`:
//!
//! ```text
//! ω = sin θ cos φ · t + cos θ · b + sin θ sin φ · ξ
//! ```
//!
//! so `ω·ξ = sin θ sin φ` and `dω = sin θ dθ dφ`. The rectangle
//! `[0, π]²` is the hemisphere around the lobe axis.

use crate::error::{domain, Result};
use crate::math::{cos, expm1, sigmoid, sin, Vec3, FRAC_PI_2, PI, TAU};
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsgCoefficients {
    /// `g4, g3, g2, g1, g0`.
    pub g: [f64; 5],
    /// `h4, h3, h2, h1, h0`.
    pub h: [f64; 5],
}

impl Default for IsgCoefficients {
    fn default() -> Self {
        Self {
            g: [-2.6856e-6, 7e-4, -0.0571, 3.9529, 17.6028],
            h: [-2.6875e-6, 7e-4, -0.0592, 3.9900, 17.5003],
        }
    }
}

fn horner(c: &[f64; 5], x: f64) -> f64 {
    c.iter().fold(0.0, |acc, &k| acc * x + k)
}

impl IsgCoefficients {
    /// Sigmoid slope along θ, `g(η)` with `x = η/100`.
    pub fn theta_slope(&self, eta: f64) -> f64 {
        horner(&self.g, eta / 100.0)
    }

    /// Sigmoid slope along φ, `h(η)`.
    pub fn phi_slope(&self, eta: f64) -> f64 {
        horner(&self.h, eta / 100.0)
    }
}

fn check_angles(theta: f64, phi: f64) -> Result<()> {
    if !(0.0..=PI).contains(&theta) || !(0.0..=PI).contains(&phi) {
        return Err(domain("ISG angles must lie in [0, π]"));
    }
    Ok(())
}

/// `Ŝ(θ, φ, η) = σ(g(η)(θ − π/2)) · σ(h(η)(φ − π/2))`, clamped to `[0, 1]`.
pub fn isg_normalized(theta: f64, phi: f64, eta: f64, coeffs: &IsgCoefficients) -> Result<f64> {
    check_angles(theta, phi)?;
    if !(eta > 0.0) {
        return Err(domain("ISG sharpness must be positive"));
    }
    Ok(isg_hat(theta, phi, coeffs.theta_slope(eta), coeffs.phi_slope(eta)))
}

/// Unchecked `Ŝ` with precomputed slopes.
#[inline]
pub(crate) fn isg_hat(theta: f64, phi: f64, g: f64, h: f64) -> f64 {
    (sigmoid(g * (theta - FRAC_PI_2)) * sigmoid(h * (phi - FRAC_PI_2))).clamp(0.0, 1.0)
}

/// Unit-lobe mass inside `[0, θ] × [0, φ]` by composite Gauss–Legendre
/// quadrature.
pub fn isg_raw(theta: f64, phi: f64, eta: f64) -> Result<f64> {
    check_angles(theta, phi)?;
    if !(eta > 0.0) {
        return Err(domain("ISG sharpness must be positive"));
    }
    if theta == 0.0 || phi == 0.0 {
        return Ok(0.0);
    }
    let panels = |span: f64| (libm::ceil(16.0 * span / PI) as usize).max(1);
    let (pt, pp) = (panels(theta), panels(phi));
    let phi_rule: alloc::vec::Vec<(f64, f64)> = quadrature::rule(0.0, phi, pp).collect();
    let total = quadrature::integrate(0.0, theta, pt, |t| {
        let st = sin(t);
        let inner: f64 =
            phi_rule.iter().map(|&(p, w)| w * crate::math::exp(eta * (st * sin(p) - 1.0))).sum();
        inner * st
    });
    Ok(total)
}

/// `S(π, π, η)`: mass of the unit lobe on its own hemisphere,
/// `2π/η·(1 − e^{−η})`.
pub fn isg_total(eta: f64) -> f64 {
    -TAU / eta * expm1(-eta)
}

/// Lobe-frame direction for `(θ, φ)`; returns the coordinates along
/// `(t, b, ξ)`.
pub fn lobe_local_direction(theta: f64, phi: f64) -> Vec3 {
    let st = sin(theta);
    Vec3::new(st * cos(phi), cos(theta), st * sin(phi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slopes_at_100() {
        let c = IsgCoefficients::default();
        assert!((c.theta_slope(100.0) - 21.499).abs() < 1e-3);
        assert!((c.phi_slope(100.0) - 21.432).abs() < 1e-3);
    }

    #[test]
    fn midpoint_is_a_quarter() {
        let c = IsgCoefficients::default();
        for eta in [0.01, 1.0, 10.0, 77.7, 1e3] {
            assert_eq!(isg_normalized(FRAC_PI_2, FRAC_PI_2, eta, &c).unwrap(), 0.25);
        }
    }

    #[test]
    fn full_range_is_one() {
        let c = IsgCoefficients::default();
        assert!(isg_normalized(PI, PI, 100.0, &c).unwrap() >= 1.0 - 1e-10);
    }

    #[test]
    fn raw_edges_and_total() {
        assert_eq!(isg_raw(0.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(isg_raw(1.0, 0.0, 5.0).unwrap(), 0.0);
        for eta in [0.5, 10.0, 100.0] {
            let s = isg_raw(PI, PI, eta).unwrap();
            assert!((s - isg_total(eta)).abs() <= 1e-6 * isg_total(eta), "eta {eta}");
        }
        assert!(isg_raw(-0.1, 1.0, 1.0).is_err());
        assert!(isg_raw(1.0, 3.2, 1.0).is_err());
    }

    // Independent oracle: Monte-Carlo style Riemann sum over the actual
    // directions, counting those whose (θ, φ) fall in the rectangle.
    #[test]
    fn raw_matches_direction_count() {
        let eta = 10.0;
        let (theta, phi) = (1.9, 1.3);
        let n = 600;
        let mut acc = 0.0;
        for i in 0..n {
            let ct = 1.0 - (i as f64 + 0.5) * 2.0 / n as f64;
            let st = libm::sqrt(1.0 - ct * ct);
            for j in 0..2 * n {
                let az = (j as f64 + 0.5) / (2 * n) as f64 * TAU;
                // Direction in (t, b, ξ) coordinates with b as the polar axis.
                let w = Vec3::new(st * libm::cos(az), ct, st * libm::sin(az));
                if w.z < 0.0 {
                    continue;
                }
                let th = libm::acos(w.y);
                let ph = libm::atan2(w.z, w.x);
                if th <= theta && ph <= phi {
                    acc += libm::exp(eta * (w.z - 1.0));
                }
            }
        }
        let oracle = acc * (2.0 / n as f64) * (TAU / (2 * n) as f64);
        let s = isg_raw(theta, phi, eta).unwrap();
        assert!((s - oracle).abs() < 2e-3 * isg_total(eta), "{s} vs {oracle}");
    }

    #[test]
    fn local_direction_axis() {
        assert!((lobe_local_direction(FRAC_PI_2, FRAC_PI_2) - Vec3::z()).norm() < 1e-15);
    }

    proptest! {
        #[test]
        fn normalized_bounded_and_monotone(
            t0 in 0.0..PI, dt in 0.0..1.0f64, p0 in 0.0..PI, dp in 0.0..1.0f64, eta in 0.1f64..200.0
        ) {
            let c = IsgCoefficients::default();
            let t1 = (t0 + dt).min(PI);
            let p1 = (p0 + dp).min(PI);
            let a = isg_normalized(t0, p0, eta, &c).unwrap();
            let b = isg_normalized(t1, p0, eta, &c).unwrap();
            let d = isg_normalized(t0, p1, eta, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a && d >= a);
        }

        #[test]
        fn raw_monotone(t in 0.0..3.0f64, p in 0.0..3.0f64, eta in 0.5f64..100.0) {
            let a = isg_raw(t, p, eta).unwrap();
            let b = isg_raw(t + 0.1, p, eta).unwrap();
            let c = isg_raw(t, p + 0.1, eta).unwrap();
            prop_assert!(b >= a - 1e-12 && c >= a - 1e-12);
        }
    }
}
