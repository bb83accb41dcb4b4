//! Material parameter grids sampled bilinearly in UV.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math::{rgb, Rgb};

/// Skin tone used to initialise the indirect hand illumination (#E0AC69).
pub const SKIN_INDIRECT: [f64; 3] = [0.8784, 0.6745, 0.4118];

/// Row-major texel grid. Texel `(i, j)` (row, column) is centred at
/// `u = (j + ½)/W`, `v = (i + ½)/H`; lookups clamp to the edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, texels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || texels.len() != width * height {
            return Err(invalid("texture grid dimensions do not match its texel count"));
        }
        Ok(Self { width, height, texels })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, texels: vec![value; width * height] }
    }

    pub fn len(&self) -> usize {
        self.texels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texels.is_empty()
    }
}

/// The four texels and weights of a bilinear lookup.
pub fn bilinear_weights(width: usize, height: usize, uv: [f64; 2]) -> [(usize, f64); 4] {
    let x = (uv[0] * width as f64 - 0.5).clamp(0.0, (width - 1) as f64);
    let y = (uv[1] * height as f64 - 0.5).clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (x as usize, y as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

impl Grid<Rgb> {
    pub fn sample(&self, uv: [f64; 2]) -> Rgb {
        bilinear_weights(self.width, self.height, uv).iter().map(|&(k, w)| self.texels[k] * w).sum()
    }
}

impl Grid<f64> {
    pub fn sample(&self, uv: [f64; 2]) -> f64 {
        bilinear_weights(self.width, self.height, uv).iter().map(|&(k, w)| self.texels[k] * w).sum()
    }
}

/// Point-wise BRDF inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParams {
    pub albedo: Rgb,
    pub roughness: f64,
    pub specular: Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub albedo: Grid<Rgb>,
    pub roughness: Grid<f64>,
    /// Base reflectance `s` of the Fresnel term.
    pub specular: Rgb,
    /// Radiance `L_i` reflected by the hand into occluded directions.
    pub indirect: Rgb,
}

impl Material {
    pub fn new(albedo: Grid<Rgb>, roughness: Grid<f64>, specular: Rgb, indirect: Rgb) -> Result<Self> {
        let m = Self { albedo, roughness, specular, indirect };
        m.validate()?;
        Ok(m)
    }

    pub fn uniform(albedo: Rgb, roughness: f64, specular: Rgb) -> Self {
        Self {
            albedo: Grid::filled(1, 1, albedo),
            roughness: Grid::filled(1, 1, roughness),
            specular,
            indirect: rgb(SKIN_INDIRECT[0], SKIN_INDIRECT[1], SKIN_INDIRECT[2]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |c: &Rgb| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !self.albedo.texels.iter().all(unit) {
            return Err(invalid("albedo texels must lie in [0, 1]"));
        }
        if !self.roughness.texels.iter().all(|r| *r > 0.0 && *r <= 1.0) {
            return Err(invalid("roughness texels must lie in (0, 1]"));
        }
        if !unit(&self.specular) {
            return Err(invalid("specular reflectance must lie in [0, 1]"));
        }
        if !self.indirect.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return Err(invalid("indirect illumination must be nonnegative"));
        }
        Ok(())
    }

    pub fn params(&self, uv: [f64; 2]) -> SurfaceParams {
        SurfaceParams { albedo: self.albedo.sample(uv), roughness: self.roughness.sample(uv), specular: self.specular }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_texel_centres_and_blends() {
        let g = Grid::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.sample([0.25, 0.25]), 0.0);
        assert_eq!(g.sample([0.75, 0.75]), 3.0);
        assert!((g.sample([0.5, 0.5]) - 1.5).abs() < 1e-15);
        assert_eq!(g.sample([-1.0, 0.25]), 0.0);
        for uv in [[0.1, 0.9], [0.6, 0.3]] {
            let w: f64 = bilinear_weights(2, 2, uv).iter().map(|x| x.1).sum();
            assert!((w - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validation() {
        let bad = Material::new(Grid::filled(1, 1, rgb(1.2, 0.0, 0.0)), Grid::filled(1, 1, 0.5), Rgb::zeros(), Rgb::zeros());
        assert!(bad.is_err());
        let bad = Material::new(Grid::filled(1, 1, Rgb::zeros()), Grid::filled(1, 1, 0.0), Rgb::zeros(), Rgb::zeros());
        assert!(bad.is_err());
        assert!(Material::uniform(rgb(0.5, 0.5, 0.5), 0.5, Rgb::zeros()).validate().is_ok());
    }
}
