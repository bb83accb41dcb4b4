//! PNG, PFM and HDR/EXR image IO.
//!
//! Colour PNGs are sRGB-encoded; scalar PNGs (masks, occlusion) store the
//! linear value. PFM holds linear 32-bit floats, little endian, bottom row
//! first as the format requires.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use texsg_core::env::EquirectImage;
use texsg_core::material::Grid;
use texsg_core::math::Rgb;
use texsg_core::raster::Image;

pub fn srgb_encode(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_decode(x: f64) -> f64 {
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png_rgb(path: &Path, img: &Image<Rgb>) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().flat_map(|c| c.iter().map(|&v| to_u8(srgb_encode(v))).collect::<Vec<_>>()).collect();
    image::RgbImage::from_raw(img.width as u32, img.height as u32, buf)
        .context("image buffer size mismatch")?
        .save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_png_gray(path: &Path, img: &Image<f64>) -> Result<()> {
    let buf: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    image::GrayImage::from_raw(img.width as u32, img.height as u32, buf)
        .context("image buffer size mismatch")?
        .save(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

/// Linear values in `[0, 1]` from an 8-bit grayscale PNG.
pub fn read_png_gray(path: &Path) -> Result<Image<f64>> {
    let img = image::open(path).with_context(|| format!("cannot read {}", path.display()))?.to_luma8();
    Ok(Image { width: img.width() as usize, height: img.height() as usize, data: img.pixels().map(|p| p.0[0] as f64 / 255.0).collect() })
}

pub fn read_albedo_png(path: &Path) -> Result<Grid<Rgb>> {
    let img = image::open(path).with_context(|| format!("cannot read {}", path.display()))?.to_rgb8();
    let texels = img.pixels().map(|p| Rgb::new(srgb_decode(p.0[0] as f64 / 255.0), srgb_decode(p.0[1] as f64 / 255.0), srgb_decode(p.0[2] as f64 / 255.0))).collect();
    Ok(Grid::new(img.width() as usize, img.height() as usize, texels)?)
}

pub fn read_gray_png_grid(path: &Path) -> Result<Grid<f64>> {
    let img = read_png_gray(path)?;
    Ok(Grid::new(img.width, img.height, img.data)?)
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, values: impl Fn(usize, usize, usize) -> f64) -> Result<()> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(width * height * channels * 4);
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                out.extend_from_slice(&(values(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_pfm_rgb(path: &Path, img: &Image<Rgb>) -> Result<()> {
    write_pfm(path, img.width, img.height, 3, |x, y, c| img.get(x, y)[c])
}

pub fn write_pfm_gray(path: &Path, img: &Image<f64>) -> Result<()> {
    write_pfm(path, img.width, img.height, 1, |x, y, _| img.get(x, y))
}

/// Decoded PFM: top row first, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("{}: truncated PFM header", path.display());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => bail!("{}: not a PFM file (magic {other:?})", path.display()),
    };
    let parse = |s: &str| s.parse::<usize>().with_context(|| format!("{}: bad PFM size {s:?}", path.display()));
    let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
    let scale: f64 = fields[3].parse().with_context(|| format!("{}: bad PFM scale", path.display()))?;
    let count = width * height * channels;
    let body = &bytes[pos.min(bytes.len())..];
    if body.len() < count * 4 {
        bail!("{}: PFM data is truncated", path.display());
    }
    let word = |k: usize| {
        let b = [body[4 * k], body[4 * k + 1], body[4 * k + 2], body[4 * k + 3]];
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let mut data = vec![0.0f32; count];
    for row in 0..height {
        let y = height - 1 - row;
        for k in 0..width * channels {
            data[y * width * channels + k] = word(row * width * channels + k);
        }
    }
    Ok(Pfm { width, height, channels, data })
}

pub fn read_pfm_rgb(path: &Path) -> Result<Image<Rgb>> {
    let p = read_pfm(path)?;
    let px = |k: usize| match p.channels {
        3 => Rgb::new(p.data[3 * k] as f64, p.data[3 * k + 1] as f64, p.data[3 * k + 2] as f64),
        _ => Rgb::repeat(p.data[k] as f64),
    };
    Ok(Image { width: p.width, height: p.height, data: (0..p.width * p.height).map(px).collect() })
}

/// Equirectangular radiance map from `.hdr`, `.exr` or `.pfm`. Row 0 is the
/// top (+y); the image centre column looks along +z.
pub fn read_equirect(path: &Path) -> Result<EquirectImage> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let (w, h, pixels) = if ext == "pfm" {
        let img = read_pfm_rgb(path)?;
        (img.width, img.height, img.data)
    } else {
        let img = image::open(path).with_context(|| format!("cannot read {}", path.display()))?.to_rgb32f();
        let px = img.pixels().map(|p| Rgb::new(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64)).collect();
        (img.width() as usize, img.height() as usize, px)
    };
    Ok(EquirectImage::new(w, h, pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip() {
        for k in 0..=100 {
            let x = k as f64 / 100.0;
            assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-12);
        }
        assert!((srgb_encode(0.5) - 0.735_356_9).abs() < 1e-6);
    }

    #[test]
    fn pfm_round_trip_keeps_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pfm");
        let img = Image { width: 3, height: 2, data: (0..6).map(|k| Rgb::new(k as f64, 0.5, -1.0)).collect() };
        write_pfm_rgb(&p, &img).unwrap();
        assert_eq!(read_pfm_rgb(&p).unwrap(), img);
        let g = Image { width: 2, height: 2, data: vec![0.0, 0.25, 0.5, 1.0] };
        write_pfm_gray(&p, &g).unwrap();
        let back = read_pfm(&p).unwrap();
        assert_eq!((back.channels, back.data.clone()), (1, vec![0.0, 0.25, 0.5, 1.0]));
    }

    #[test]
    fn pfm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        fs::write(&p, b"P6\n1 1\n255\n").unwrap();
        assert!(read_pfm(&p).is_err());
        fs::write(&p, b"PF\n2 2\n-1.0\n\0\0").unwrap();
        assert!(read_pfm(&p).is_err());
    }

    #[test]
    fn masks_survive_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Image { width: 2, height: 2, data: vec![0.0, 1.0, 1.0, 0.0] };
        write_png_gray(&p, &m).unwrap();
        assert_eq!(read_png_gray(&p).unwrap(), m);
    }
}
