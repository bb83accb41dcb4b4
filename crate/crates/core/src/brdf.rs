//! Diffuse plus microfacet specular BRDF.
//!
//! The normal distribution is the SG form `D(h) = 1/(πα²)·exp(2/α²·(h·n − 1))`
//! with `α = r²`; Fresnel is Schlick with base reflectance `s`; shadowing is
//! the height-correlated Smith term.

use crate::error::{domain, Result};
use crate::material::SurfaceParams;
use crate::math::{pow, reflect, sqrt, Rgb, Vec3, PI};
use crate::sg::SphericalGaussian;

/// Smallest cosine allowed in the specular denominator.
pub const MIN_COS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrdfValue {
    pub value: Rgb,
    /// A grazing cosine was clamped to [`MIN_COS`].
    pub clamped: bool,
}

#[inline]
pub fn alpha(roughness: f64) -> f64 {
    roughness * roughness
}

pub fn fresnel_schlick(s: &Rgb, cos_theta: f64) -> Rgb {
    let k = pow((1.0 - cos_theta).clamp(0.0, 1.0), 5.0);
    s + (Rgb::repeat(1.0) - s) * k
}

pub fn smith_lambda(alpha: f64, cos_theta: f64) -> f64 {
    let c2 = cos_theta * cos_theta;
    let tan2 = (1.0 - c2).max(0.0) / c2.max(1e-300);
    0.5 * (-1.0 + sqrt(1.0 + alpha * alpha * tan2))
}

/// Height-correlated masking-shadowing `1/(1 + Λ(ω_o) + Λ(ω_i))`.
pub fn smith_g2(alpha: f64, cos_o: f64, cos_i: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(alpha, cos_o) + smith_lambda(alpha, cos_i))
}

/// `(sharpness, amplitude)` of the SG normal distribution.
pub fn ndf_sg(alpha: f64) -> (f64, f64) {
    let a2 = alpha * alpha;
    (2.0 / a2, 1.0 / (PI * a2))
}

pub fn ndf(alpha: f64, cos_h: f64) -> f64 {
    let (lam, amp) = ndf_sg(alpha);
    amp * crate::math::exp(lam * (cos_h - 1.0))
}

/// Point evaluation `a/π + D·F·G / (4 cos_o cos_i)`.
pub fn brdf_eval(p: &SurfaceParams, n: &Vec3, wo: &Vec3, wi: &Vec3) -> Result<BrdfValue> {
    let co = wo.dot(n);
    let ci = wi.dot(n);
    if !(co > 0.0 && ci > 0.0) {
        return Err(domain("BRDF directions must lie above the surface"));
    }
    Ok(brdf_unchecked(p, n, wo, wi))
}

pub(crate) fn brdf_unchecked(p: &SurfaceParams, n: &Vec3, wo: &Vec3, wi: &Vec3) -> BrdfValue {
    let diffuse = p.albedo / PI;
    if p.specular == Rgb::zeros() {
        return BrdfValue { value: diffuse.sup(&Rgb::zeros()), clamped: false };
    }
    let co = wo.dot(n);
    let ci = wi.dot(n);
    let clamped = co < MIN_COS || ci < MIN_COS;
    let (co, ci) = (co.max(MIN_COS), ci.max(MIN_COS));
    let h = (wo + wi).normalize();
    let a = alpha(p.roughness);
    let f = fresnel_schlick(&p.specular, wo.dot(&h).max(0.0));
    let spec = f * (ndf(a, h.dot(n)) * smith_g2(a, co, ci) / (4.0 * co * ci));
    BrdfValue { value: (diffuse + spec).sup(&Rgb::zeros()), clamped }
}

/// Specular lobe warped about the reflection direction, and the
/// `F·G/(4 cos_o cos_i)` factor evaluated at its centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularLobe {
    pub lobe: SphericalGaussian,
    pub factor: Rgb,
    pub clamped: bool,
}

pub fn specular_lobe(p: &SurfaceParams, n: &Vec3, wo: &Vec3) -> SpecularLobe {
    let a = alpha(p.roughness);
    let (lam, amp) = ndf_sg(a);
    let co_raw = wo.dot(n);
    let co = co_raw.max(MIN_COS);
    let axis = reflect(wo, n).normalize();
    let lobe = SphericalGaussian::from_parts(axis, lam / (4.0 * co), Rgb::repeat(amp));
    let ci_raw = axis.dot(n);
    let ci = ci_raw.max(MIN_COS);
    let h = (wo + axis).normalize();
    let f = fresnel_schlick(&p.specular, wo.dot(&h).max(0.0));
    let factor = f * (smith_g2(a, co, ci) / (4.0 * co * ci));
    SpecularLobe { lobe, factor, clamped: co_raw < MIN_COS || ci_raw < MIN_COS }
}
