use alloc::vec;
use alloc::vec::Vec;

use crate::math::{log, Rgb};

/// Row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }
}

impl Image<Rgb> {
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|p| p.iter().any(|c| !c.is_finite()))
    }
}

impl Image<f64> {
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|c| !c.is_finite())
    }
}

/// PSNR in dB for peak value 1 over the pixels selected by `mask`
/// (all pixels when `None`).
pub fn psnr(a: &Image<Rgb>, b: &Image<Rgb>, mask: Option<&[bool]>) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for (k, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        se += (x - y).norm_squared();
        n += 3;
    }
    if n == 0 {
        return f64::INFINITY;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * log(mse) / core::f64::consts::LN_10
    }
}
