//! Spherical Gaussian lobes `G(v) = μ·exp(η(v·ξ − 1))`.

use crate::error::{domain, invalid, Result};
use crate::math::{exp, expm1, is_unit, sqrt, Rgb, Vec3, PI, TAU};

/// Sharpness given to the constant lobe returned for a degenerate product.
pub const DEGENERATE_SHARPNESS: f64 = 1e-8;

/// Cosine lobe constants: `cos(ω·n) ≈ A·exp(λ(ω·n − 1)) + OFFSET`.
pub const COSINE_AMPLITUDE: f64 = 32.7080;
pub const COSINE_SHARPNESS: f64 = 0.0315;
pub const COSINE_OFFSET: f64 = -31.7003;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalGaussian {
    pub axis: Vec3,
    pub sharpness: f64,
    pub amplitude: Rgb,
}

impl SphericalGaussian {
    /// Validating constructor. The axis must be unit length within 1e-6 and is
    /// renormalized; negative amplitudes are allowed (BRDF-side lobes need them
    /// only transiently, light lobes are checked by [`Self::is_light`]).
    pub fn new(axis: Vec3, sharpness: f64, amplitude: Rgb) -> Result<Self> {
        if !is_unit(&axis, 1e-6) {
            return Err(domain("SG axis must be unit length"));
        }
        if !(sharpness > 0.0) || !sharpness.is_finite() {
            return Err(domain("SG sharpness must be positive and finite"));
        }
        if amplitude.iter().any(|c| !c.is_finite()) {
            return Err(invalid("SG amplitude is not finite"));
        }
        Ok(Self { axis: axis.normalize(), sharpness, amplitude })
    }

    /// Unchecked constructor for hot paths; normalizes the axis.
    #[inline]
    pub fn from_parts(axis: Vec3, sharpness: f64, amplitude: Rgb) -> Self {
        Self { axis: axis.normalize(), sharpness, amplitude }
    }

    pub fn is_light(&self) -> bool {
        self.amplitude.iter().all(|&c| c >= 0.0)
    }

    /// Value at direction `v`, which must be unit length.
    pub fn evaluate(&self, v: &Vec3) -> Result<Rgb> {
        if !is_unit(v, 1e-6) {
            return Err(domain("evaluation direction must be unit length"));
        }
        Ok(self.eval(v))
    }

    #[inline]
    pub fn eval(&self, v: &Vec3) -> Rgb {
        self.amplitude * self.shape(v)
    }

    /// The unit-amplitude lobe `exp(η(v·ξ − 1))`.
    #[inline]
    pub fn shape(&self, v: &Vec3) -> f64 {
        exp(self.sharpness * (v.dot(&self.axis) - 1.0))
    }

    /// Integral of the unit-amplitude lobe over the whole sphere.
    #[inline]
    pub fn shape_integral(&self) -> f64 {
        sphere_mass(self.sharpness)
    }

    pub fn integral_sphere(&self) -> Rgb {
        self.amplitude * self.shape_integral()
    }

    /// Approximate integral over the hemisphere around unit `n`.
    pub fn integral_hemisphere(&self, n: &Vec3) -> Rgb {
        self.amplitude * hemisphere_mass(self.sharpness, self.axis.dot(n))
    }

    /// Product lobe. Exact pointwise; antiparallel lobes of equal sharpness
    /// collapse to a near-constant lobe along `self.axis` with the right value
    /// there.
    pub fn product(&self, other: &Self) -> Self {
        let (lobe, _) = self.product_flagged(other);
        lobe
    }

    /// As [`Self::product`], also reporting whether the result is degenerate.
    pub fn product_flagged(&self, other: &Self) -> (Self, bool) {
        let sum = self.axis * self.sharpness + other.axis * other.sharpness;
        let len = sum.norm();
        let scale = exp(len - self.sharpness - other.sharpness);
        let amplitude = self.amplitude.component_mul(&other.amplitude) * scale;
        if len <= 1e-12 * (self.sharpness + other.sharpness) {
            let lobe = Self { axis: self.axis, sharpness: DEGENERATE_SHARPNESS, amplitude };
            return (lobe, true);
        }
        (Self { axis: sum / len, sharpness: len, amplitude }, false)
    }

    pub fn scaled(&self, k: &Rgb) -> Self {
        Self { amplitude: self.amplitude.component_mul(k), ..*self }
    }
}

/// `∫_{S²} exp(η(ω·ξ − 1)) dω = 2π/η·(1 − e^{−2η})`.
#[inline]
pub fn sphere_mass(eta: f64) -> f64 {
    -TAU / eta * expm1(-2.0 * eta)
}

/// Mass of a unit lobe over the hemisphere `{ω : ω·n ≥ 0}`, where
/// `cos_beta = ξ·n`. Uses the fitted smooth-step blend between the lobe
/// fully below (`A_b`) and fully above (`A_u`) the horizon; it is exact at
/// `cos_beta = 0` and in the sharp limit.
pub fn hemisphere_mass(eta: f64, cos_beta: f64) -> f64 {
    let lam = eta + 1e-8;
    let il = 1.0 / lam;
    let t = sqrt(lam) * (1.6988 + 10.8438 * il) / (1.0 + 6.2201 * il + 10.2415 * il * il);
    let ia = exp(-t);
    let s = if cos_beta >= 0.0 {
        let ib = exp(-t * cos_beta);
        (1.0 - ia * ib) / (1.0 - ia + ib - ia * ib)
    } else {
        let b = exp(t * cos_beta);
        (b - ia) / ((1.0 - ia) * (b + 1.0))
    };
    let em = expm1(-lam);
    let below = -TAU / lam * exp(-lam) * em;
    let above = -TAU / lam * em;
    below * (1.0 - s) + above * s
}

/// The cosine lobe around `n` and its additive offset.
pub fn cosine_sg_approx(n: &Vec3) -> Result<(SphericalGaussian, f64)> {
    let sg = SphericalGaussian::new(*n, COSINE_SHARPNESS, Rgb::repeat(COSINE_AMPLITUDE))?;
    Ok((sg, COSINE_OFFSET))
}

pub fn sg_evaluate(sg: &SphericalGaussian, v: &Vec3) -> Result<Rgb> {
    sg.evaluate(v)
}

pub fn sg_integral_sphere(sg: &SphericalGaussian) -> Rgb {
    sg.integral_sphere()
}

pub fn sg_product(a: &SphericalGaussian, b: &SphericalGaussian) -> SphericalGaussian {
    a.product(b)
}

/// Half-angle beyond which a unit lobe carries less than `tail` of its mass.
pub fn significant_radius(eta: f64, tail: f64) -> f64 {
    // 1 − cos ψ = −ln(tail)/η for the sphere-normalized radial CDF tail.
    let one_minus_cos = -crate::math::log(tail) / eta;
    if one_minus_cos >= 2.0 {
        PI
    } else {
        crate::math::acos(1.0 - one_minus_cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{fibonacci_sphere, splat};
    use proptest::prelude::*;

    fn lobe(axis: Vec3, eta: f64, mu: f64) -> SphericalGaussian {
        SphericalGaussian::new(axis.normalize(), eta, splat(mu)).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let g = lobe(Vec3::z(), 7.0, 3.0);
        assert_eq!(g.evaluate(&Vec3::z()).unwrap(), splat(3.0));
        let g = lobe(Vec3::z(), 1.0, 2.0);
        let v = g.evaluate(&Vec3::x()).unwrap();
        assert!((v.x - 0.7358).abs() < 1e-4);
        assert_eq!(lobe(Vec3::z(), 1.0, 0.0).evaluate(&Vec3::x()).unwrap(), Rgb::zeros());
        assert!(g.evaluate(&Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn rejects_bad_lobes() {
        assert!(SphericalGaussian::new(Vec3::new(0.0, 0.0, 1.1), 1.0, splat(1.0)).is_err());
        assert!(SphericalGaussian::new(Vec3::z(), 0.0, splat(1.0)).is_err());
        assert!(SphericalGaussian::new(Vec3::z(), 1.0, splat(f64::NAN)).is_err());
    }

    #[test]
    fn sphere_integral_closed_form() {
        assert!((lobe(Vec3::z(), 10.0, 1.0).integral_sphere().x - 0.6283).abs() < 1e-4);
        assert_eq!(lobe(Vec3::z(), 10.0, 0.0).integral_sphere(), Rgb::zeros());
        let big = lobe(Vec3::z(), 1e4, 1.0).integral_sphere().x;
        assert!((big - TAU / 1e4).abs() < 1e-12);
    }

    // Midpoint rule in (cos θ, φ) about the lobe axis: an oracle independent of
    // the closed form.
    fn sphere_quadrature(eta: f64) -> f64 {
        let n = 20_000;
        let mut acc = 0.0;
        for i in 0..n {
            let c = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
            acc += exp(eta * (c - 1.0));
        }
        acc * 2.0 / n as f64 * TAU
    }

    #[test]
    fn sphere_integral_matches_quadrature() {
        for eta in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            let closed = sphere_mass(eta);
            let q = sphere_quadrature(eta);
            assert!((closed - q).abs() / q < 1e-3, "eta {eta}: {closed} vs {q}");
        }
    }

    #[test]
    fn self_product_doubles_sharpness() {
        let a = lobe(Vec3::z(), 5.0, 1.0);
        let p = a.product(&a);
        assert!((p.axis - Vec3::z()).norm() < 1e-15);
        assert!((p.sharpness - 10.0).abs() < 1e-12);
        assert!((p.amplitude.x - 1.0).abs() < 1e-12);
        let zero = lobe(Vec3::x(), 3.0, 0.0);
        assert_eq!(a.product(&zero).amplitude, Rgb::zeros());
    }

    #[test]
    fn degenerate_product_is_finite_and_exact_at_axis() {
        let a = lobe(Vec3::z(), 4.0, 2.0);
        let b = lobe(-Vec3::z(), 4.0, 3.0);
        let (p, degenerate) = a.product_flagged(&b);
        assert!(degenerate);
        assert_eq!(p.sharpness, DEGENERATE_SHARPNESS);
        let want = a.eval(&Vec3::z()).component_mul(&b.eval(&Vec3::z()));
        assert!((p.eval(&Vec3::z()) - want).norm() < 1e-12);
    }

    #[test]
    fn hemisphere_mass_limits() {
        for eta in [2.0, 12.0, 100.0] {
            let up = hemisphere_mass(eta, 1.0);
            let exact_up = -TAU / eta * expm1(-eta);
            assert!((up - exact_up).abs() / exact_up < 0.02);
            let half = hemisphere_mass(eta, 0.0);
            assert!((half - 0.5 * sphere_mass(eta)).abs() / sphere_mass(eta) < 0.02);
        }
    }

    #[test]
    fn hemisphere_mass_matches_quadrature() {
        // Oracle: dense quadrature over the upper hemisphere.
        let n = Vec3::z();
        for eta in [1.0, 5.0, 30.0] {
            for beta in [0.0_f64, 0.5, 1.2, 1.9, 2.6] {
                let xi = Vec3::new(libm::sin(beta), 0.0, libm::cos(beta));
                let m = 400;
                let mut acc = 0.0;
                for i in 0..m {
                    let ct = (i as f64 + 0.5) / m as f64;
                    let st = sqrt(1.0 - ct * ct);
                    for j in 0..2 * m {
                        let ph = (j as f64 + 0.5) / (2 * m) as f64 * TAU;
                        let w = Vec3::new(st * libm::cos(ph), st * libm::sin(ph), ct);
                        acc += exp(eta * (w.dot(&xi) - 1.0));
                    }
                }
                let q = acc / m as f64 * (TAU / (2 * m) as f64);
                let h = hemisphere_mass(eta, xi.dot(&n));
                let scale = sphere_mass(eta);
                assert!((h - q).abs() / scale < 0.03, "eta {eta} beta {beta}: {h} vs {q}");
            }
        }
    }

    #[test]
    fn cosine_lobe_values() {
        let n = Vec3::new(0.2, -0.3, 0.9).normalize();
        let (sg, off) = cosine_sg_approx(&n).unwrap();
        assert!((sg.eval(&n).x + off - 1.0077).abs() < 1e-4);
        let (t, _) = crate::math::orthonormal_basis(&n);
        assert!((sg.eval(&t).x + off + 0.0066).abs() < 1e-3);
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            let c = i as f64 / 9_999.0;
            let w = n * c + t * sqrt(1.0 - c * c);
            worst = worst.max((sg.eval(&w).x + off - c).abs());
        }
        assert!(worst <= 0.1);
    }

    #[test]
    fn significant_radius_bounds_mass() {
        let eta = 50.0;
        let psi = significant_radius(eta, 1e-6);
        let tail = exp(-eta * (1.0 - libm::cos(psi)));
        assert!((tail - 1e-6).abs() < 1e-9);
        assert_eq!(significant_radius(2.0, 1e-6), PI);
    }

    proptest! {
        #[test]
        fn product_is_pointwise(
            ax in prop::array::uniform3(-1.0f64..1.0), bx in prop::array::uniform3(-1.0f64..1.0),
            ea in 0.05f64..200.0, eb in 0.05f64..200.0, k in 0usize..64,
        ) {
            let a = Vec3::from(ax);
            let b = Vec3::from(bx);
            prop_assume!(a.norm() > 0.1 && b.norm() > 0.1);
            let ga = lobe(a, ea, 1.3);
            let gb = lobe(b, eb, 0.7);
            let p = ga.product(&gb);
            let v = fibonacci_sphere(64)[k];
            let want = ga.eval(&v).x * gb.eval(&v).x;
            let got = p.eval(&v).x;
            prop_assert!((got - want).abs() <= 1e-9 * want.abs() + 1e-300);
        }
    }
}
