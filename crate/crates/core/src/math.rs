//! Small numeric helpers shared by every module.
//!
//! Transcendental functions go through `libm` so results are bit-identical
//! between `std` and `no_std` builds.

use nalgebra::{Matrix3, Matrix4, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;
/// Linear RGB radiance or reflectance.
pub type Rgb = Vector3<f64>;

pub use core::f64::consts::{FRAC_PI_2, PI, TAU};

pub use libm::{acos, asin, atan2, cos, exp, expm1, fabs, log, log1p, pow, sin, sqrt, tan};

#[inline]
pub fn rgb(r: f64, g: f64, b: f64) -> Rgb {
    Rgb::new(r, g, b)
}

#[inline]
pub fn splat(v: f64) -> Rgb {
    Rgb::new(v, v, v)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

#[inline]
pub fn is_unit(v: &Vec3, tol: f64) -> bool {
    fabs(v.norm() - 1.0) <= tol
}

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// True when `m` is orthonormal with determinant +1 within `tol`.
pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    let should_be_identity = m.transpose() * m;
    (should_be_identity - Mat3::identity()).abs().max() <= tol && fabs(m.determinant() - 1.0) <= tol
}

/// Branchless orthonormal basis around a unit vector (Duff et al. 2017).
/// Returns `(t, b)` with `t × b = n`.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let sign = if n.z >= 0.0 { 1.0 } else { -1.0 };
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let bt = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, bt)
}

/// Mirror `v` about `n` (both pointing away from the surface).
#[inline]
pub fn reflect(v: &Vec3, n: &Vec3) -> Vec3 {
    n * (2.0 * v.dot(n)) - v
}

/// Rotation of `angle` radians about a unit `axis`.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let a = axis.normalize();
    let (s, c) = (sin(angle), cos(angle));
    let k = Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

#[inline]
pub fn luminance(c: &Rgb) -> f64 {
    0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
}

/// Angle between two unit vectors, robust near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    2.0 * atan2((a - b).norm(), (a + b).norm())
}

/// Uniformly distributed axes on the sphere (spherical Fibonacci spiral).
pub fn fibonacci_sphere(count: usize) -> alloc::vec::Vec<Vec3> {
    let golden = PI * (3.0 - sqrt(5.0));
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            Vec3::new(r * cos(phi), r * sin(phi), z)
        })
        .collect()
}
