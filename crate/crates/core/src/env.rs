//! SG mixture environments and their fit to equirectangular radiance maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, invalid, Result};
use crate::math::{cos, fibonacci_sphere, is_rotation, sin, sqrt, Mat3, Rgb, Vec3, PI};
use crate::sg::SphericalGaussian;

pub const DEFAULT_LOBES: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct SGEnvironment {
    pub lobes: Vec<SphericalGaussian>,
    /// Applied to every stored lobe axis when the environment is evaluated.
    pub frame_rotation: Mat3,
}

impl SGEnvironment {
    pub fn new(lobes: Vec<SphericalGaussian>) -> Self {
        Self { lobes, frame_rotation: Mat3::identity() }
    }

    pub fn with_rotation(lobes: Vec<SphericalGaussian>, frame_rotation: Mat3) -> Result<Self> {
        if !is_rotation(&frame_rotation, 1e-6) {
            return Err(domain("environment frame rotation must be a proper rotation"));
        }
        Ok(Self { lobes, frame_rotation })
    }

    /// All-zero mixture on the standard Fibonacci axes.
    pub fn black(count: usize, sharpness: f64) -> Self {
        let lobes = fibonacci_sphere(count)
            .into_iter()
            .map(|a| SphericalGaussian::from_parts(a, sharpness, Rgb::zeros()))
            .collect();
        Self::new(lobes)
    }

    pub fn len(&self) -> usize {
        self.lobes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lobes.is_empty()
    }

    /// Lobes with the frame rotation baked into their axes.
    pub fn world_lobes(&self) -> Vec<SphericalGaussian> {
        self.lobes.iter().map(|l| SphericalGaussian { axis: self.frame_rotation * l.axis, ..*l }).collect()
    }

    pub fn radiance(&self, dir: &Vec3) -> Rgb {
        let local = self.frame_rotation.transpose() * dir;
        self.lobes.iter().map(|l| l.eval(&local)).sum()
    }

    /// The environment as seen from a frame rotated by `rotation`: every axis
    /// becomes `rotation⁻¹ ψ`.
    pub fn counter_rotated(&self, rotation: &Mat3) -> Result<Self> {
        env_rotate(self, rotation)
    }

    /// The environment physically rotated by `rotation` (axes become `R ψ`).
    pub fn rotated(&self, rotation: &Mat3) -> Result<Self> {
        env_rotate(self, &rotation.transpose())
    }

    pub fn amplitudes(&self) -> Vec<Rgb> {
        self.lobes.iter().map(|l| l.amplitude).collect()
    }

    pub fn set_amplitudes(&mut self, amps: &[Rgb]) {
        for (l, a) in self.lobes.iter_mut().zip(amps) {
            l.amplitude = *a;
        }
    }
}

/// Counter-rotate an environment: each axis `ψ_j` becomes `R⁻¹ ψ_j`.
pub fn env_rotate(env: &SGEnvironment, rotation: &Mat3) -> Result<SGEnvironment> {
    if !is_rotation(rotation, 1e-6) {
        return Err(domain("environment rotation must be orthonormal with det +1"));
    }
    let inv = rotation.transpose();
    let lobes = env.lobes.iter().map(|l| SphericalGaussian { axis: inv * l.axis, ..*l }).collect();
    Ok(SGEnvironment { lobes, frame_rotation: env.frame_rotation })
}

/// Row-major linear radiance map, `+z` forward, `+y` up. Column `x` maps to
/// longitude `2π(x + ½)/W − π`, row `y` to latitude `π/2 − π(y + ½)/H`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl EquirectImage {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("environment image must have positive dimensions"));
        }
        if pixels.len() != width * height {
            return Err(invalid("environment image pixel count does not match its dimensions"));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, value: Rgb) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn direction(&self, x: usize, y: usize) -> Vec3 {
        let lon = 2.0 * PI * (x as f64 + 0.5) / self.width as f64 - PI;
        let lat = PI / 2.0 - PI * (y as f64 + 0.5) / self.height as f64;
        Vec3::new(cos(lat) * sin(lon), sin(lat), cos(lat) * cos(lon))
    }

    pub fn solid_angle(&self, y: usize) -> f64 {
        let lat = PI / 2.0 - PI * (y as f64 + 0.5) / self.height as f64;
        (2.0 * PI / self.width as f64) * (PI / self.height as f64) * cos(lat)
    }

    /// Box-filter down by the smallest integer factor that brings the image
    /// within `max_w × max_h`.
    pub fn downsampled(&self, max_w: usize, max_h: usize) -> Self {
        let f = self.width.div_ceil(max_w).max(self.height.div_ceil(max_h)).max(1);
        if f == 1 {
            return self.clone();
        }
        let (w, h) = ((self.width / f).max(1), (self.height / f).max(1));
        let mut pixels = vec![Rgb::zeros(); w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = Rgb::zeros();
                let mut n = 0.0;
                for sy in y * f..((y + 1) * f).min(self.height) {
                    for sx in x * f..((x + 1) * f).min(self.width) {
                        acc += self.pixels[sy * self.width + sx];
                        n += 1.0;
                    }
                }
                pixels[y * w + x] = acc / n;
            }
        }
        Self { width: w, height: h, pixels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvFit {
    pub env: SGEnvironment,
    /// Solid-angle weighted RMS residual, relative to the RMS radiance
    /// (0 for an all-black map).
    pub relative_error: f64,
}

const NNLS_ITERS: usize = 200;

/// Fit `num_lobes` lobes of fixed `sharpness` on Fibonacci axes by
/// solid-angle weighted nonnegative least squares.
pub fn env_fit(image: &EquirectImage, num_lobes: usize, sharpness: f64) -> Result<EnvFit> {
    if num_lobes == 0 {
        return Err(invalid("num_lobes must be at least 1"));
    }
    if !(sharpness > 0.0) {
        return Err(domain("lobe sharpness must be positive"));
    }
    if image.pixels.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(invalid("environment image contains NaN or infinite pixels"));
    }
    let img = image.downsampled(256, 128);
    let axes = fibonacci_sphere(num_lobes);
    let k = num_lobes;

    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![Rgb::zeros(); k];
    let mut yy = Rgb::zeros();
    let mut row = vec![0.0; k];
    for y in 0..img.height {
        let w = img.solid_angle(y);
        for x in 0..img.width {
            let d = img.direction(x, y);
            let target = img.pixels[y * img.width + x];
            for (j, a) in axes.iter().enumerate() {
                row[j] = crate::math::exp(sharpness * (d.dot(a) - 1.0));
            }
            for i in 0..k {
                let wi = w * row[i];
                if wi < 1e-300 {
                    continue;
                }
                rhs[i] += target * wi;
                for j in i..k {
                    gram[i * k + j] += wi * row[j];
                }
            }
            yy += target.component_mul(&target) * w;
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[i * k + j] = gram[j * k + i];
        }
    }

    let lipschitz = largest_eigenvalue(&gram, k);
    let mut amps = vec![Rgb::zeros(); k];
    for c in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|r| r[c]).collect();
        let x = nnls_fista(&gram, &b, k, lipschitz);
        for i in 0..k {
            amps[i][c] = x[i];
        }
    }

    // Residual ‖Ax − y‖² = xᵀQx − 2xᵀb + yᵀy per channel.
    let mut resid = 0.0;
    for c in 0..3 {
        let mut qx = 0.0;
        let mut xb = 0.0;
        for i in 0..k {
            let xi = amps[i][c];
            xb += xi * rhs[i][c];
            for j in 0..k {
                qx += xi * gram[i * k + j] * amps[j][c];
            }
        }
        resid += (qx - 2.0 * xb + yy[c]).max(0.0);
    }
    let total = yy.x + yy.y + yy.z;
    let relative_error = if total > 0.0 { sqrt(resid / total) } else { 0.0 };

    let lobes = axes
        .into_iter()
        .zip(amps)
        .map(|(a, m)| SphericalGaussian::from_parts(a, sharpness, m))
        .collect();
    Ok(EnvFit { env: SGEnvironment::new(lobes), relative_error })
}

fn largest_eigenvalue(q: &[f64], k: usize) -> f64 {
    let mut v = vec![1.0 / sqrt(k as f64); k];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut w = vec![0.0; k];
        for i in 0..k {
            w[i] = (0..k).map(|j| q[i * k + j] * v[j]).sum();
        }
        let norm = sqrt(w.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Accelerated projected gradient for `min ½xᵀQx − bᵀx, x ≥ 0`.
fn nnls_fista(q: &[f64], b: &[f64], k: usize, lipschitz: f64) -> Vec<f64> {
    let mut x = vec![0.0; k];
    if lipschitz <= 0.0 {
        return x;
    }
    let step = 1.0 / lipschitz;
    let mut z = x.clone();
    let mut t = 1.0_f64;
    for _ in 0..NNLS_ITERS {
        let mut next = vec![0.0; k];
        for i in 0..k {
            let grad: f64 = (0..k).map(|j| q[i * k + j] * z[j]).sum::<f64>() - b[i];
            next[i] = (z[i] - step * grad).max(0.0);
        }
        let t_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t));
        let mom = (t - 1.0) / t_next;
        for i in 0..k {
            z[i] = (next[i] + mom * (next[i] - x[i])).max(0.0);
        }
        x = next;
        t = t_next;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{axis_angle, splat};

    fn two_lobe_env() -> SGEnvironment {
        SGEnvironment::new(vec![
            SphericalGaussian::from_parts(Vec3::x(), 4.0, splat(1.0)),
            SphericalGaussian::from_parts(Vec3::new(0.0, 1.0, 1.0), 9.0, Rgb::new(0.1, 0.2, 0.3)),
        ])
    }

    #[test]
    fn identity_rotation_is_noop() {
        let e = two_lobe_env();
        assert_eq!(env_rotate(&e, &Mat3::identity()).unwrap(), e);
    }

    #[test]
    fn rotate_and_back() {
        let e = two_lobe_env();
        let r = axis_angle(&Vec3::new(0.3, 1.0, -0.2), 1.1);
        let back = env_rotate(&env_rotate(&e, &r).unwrap(), &r.transpose()).unwrap();
        for (a, b) in back.lobes.iter().zip(&e.lobes) {
            assert!((a.axis - b.axis).norm() < 1e-9);
            assert_eq!(a.sharpness, b.sharpness);
            assert_eq!(a.amplitude, b.amplitude);
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let e = SGEnvironment::new(vec![SphericalGaussian::from_parts(Vec3::x(), 2.0, splat(1.0))]);
        let r = axis_angle(&Vec3::z(), PI / 2.0);
        let out = env_rotate(&e, &r).unwrap();
        assert!((out.lobes[0].axis - (-Vec3::y())).norm() < 1e-15);
        assert!(env_rotate(&e, &(r * 2.0)).is_err());
    }

    #[test]
    fn rotation_preserves_pairwise_angles() {
        let e = two_lobe_env();
        let r = axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.4);
        let out = env_rotate(&e, &r).unwrap();
        let before = e.lobes[0].axis.dot(&e.lobes[1].axis);
        let after = out.lobes[0].axis.dot(&out.lobes[1].axis);
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn fit_constant_white() {
        let img = EquirectImage::constant(128, 64, splat(1.0));
        let fit = env_fit(&img, 128, 12.0).unwrap();
        let dirs = fibonacci_sphere(100);
        for d in dirs.iter().map(|d| axis_angle(&Vec3::new(0.2, 0.9, 0.1), 0.37) * d) {
            let v = fit.env.radiance(&d);
            assert!((v.x - 1.0).abs() < 0.05, "{v:?}");
        }
    }

    #[test]
    fn fit_zero_image() {
        let img = EquirectImage::constant(32, 16, Rgb::zeros());
        let fit = env_fit(&img, 16, 5.0).unwrap();
        assert!(fit.env.lobes.iter().all(|l| l.amplitude == Rgb::zeros()));
        assert_eq!(fit.relative_error, 0.0);
    }

    #[test]
    fn more_lobes_fit_better() {
        let mut img = EquirectImage::constant(64, 32, Rgb::zeros());
        img.pixels[10 * 64 + 40] = splat(50.0);
        let e1 = env_fit(&img, 1, 3.0).unwrap().relative_error;
        let e16 = env_fit(&img, 16, 3.0).unwrap().relative_error;
        assert!(e16 <= e1);
    }

    #[test]
    fn fit_rejects_nan() {
        let mut img = EquirectImage::constant(8, 4, splat(1.0));
        img.pixels[3] = splat(f64::NAN);
        assert!(env_fit(&img, 4, 3.0).is_err());
    }

    #[test]
    fn solid_angles_cover_sphere() {
        let img = EquirectImage::constant(64, 32, Rgb::zeros());
        let total: f64 = (0..32).map(|y| img.solid_angle(y) * 64.0).sum();
        assert!((total - 4.0 * PI).abs() < 0.01);
        assert!((img.direction(32, 16) - Vec3::new(0.0, 0.0, 1.0)).norm() < 0.1);
    }
}
