//! Monte-Carlo reference integrators with exact ray–sphere visibility.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::brdf::{brdf_unchecked, specular_lobe};
use crate::error::{invalid, Result};
use crate::geometry::{intersect_sphere, Ray};
use crate::hand::Sphere;
use crate::math::{cos, log1p, orthonormal_basis, rgb, sin, sqrt, Rgb, Vec3, FRAC_PI_2, PI, TAU};
use crate::occlusion::{OcclusionEngine, OcclusionQuery};
use crate::shading::{PreparedFrame, Renderer, Scene, HAND_ALBEDO};
use crate::sg::{significant_radius, sphere_mass, SphericalGaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    UniformHemisphere,
    CosineWeighted,
    /// Importance sampling of the SG lobe (mixed with cosine sampling for
    /// pixel estimates).
    Lobe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Independent random stream, e.g. a query or pixel id.
    pub stream: u64,
}

impl OracleConfig {
    pub fn new(sample_count: usize, seed: u64, sampling: Sampling) -> Result<Self> {
        if sample_count == 0 {
            return Err(invalid("oracle needs at least one sample"));
        }
        Ok(Self { sample_count, seed, sampling, stream: 0 })
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    fn rng(&self) -> Sampler {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        Sampler(r)
    }
}

struct Sampler(ChaCha8Rng);

impl Sampler {
    /// Uniform in `[0, 1)`.
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn frame_dir(n: &Vec3, ct: f64, phi: f64) -> Vec3 {
    let (t, b) = orthonormal_basis(n);
    let st = sqrt((1.0 - ct * ct).max(0.0));
    t * (st * cos(phi)) + b * (st * sin(phi)) + n * ct
}

fn sample_uniform(n: &Vec3, s: &mut Sampler) -> Vec3 {
    let ct = s.uniform();
    frame_dir(n, ct, TAU * s.uniform())
}

fn sample_cosine(n: &Vec3, s: &mut Sampler) -> Vec3 {
    let ct = sqrt(1.0 - s.uniform());
    frame_dir(n, ct, TAU * s.uniform())
}

/// Direction with density `exp(η(ω·ξ − 1)) / ∫G`.
fn sample_lobe(axis: &Vec3, eta: f64, s: &mut Sampler) -> Vec3 {
    let u = s.uniform();
    let ct = (1.0 + log1p(u * crate::math::expm1(-2.0 * eta)) / eta).clamp(-1.0, 1.0);
    frame_dir(axis, ct, TAU * s.uniform())
}

fn occluded(x: &Vec3, dir: &Vec3, spheres: &[Sphere]) -> bool {
    let ray = Ray { origin: *x, dir: *dir };
    spheres.iter().any(|s| intersect_sphere(&ray, &s.center, s.radius).is_some())
}

/// Running mean and variance of a vector estimator.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: Rgb,
    m2: Rgb,
}

impl Moments {
    fn push(&mut self, v: Rgb) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d.component_mul(&(v - self.mean));
    }

    fn stderr(&self) -> Rgb {
        if self.n < 2.0 {
            return Rgb::zeros();
        }
        (self.m2 / ((self.n - 1.0) * self.n)).map(sqrt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSgIntegral {
    /// `∫_{Ω⁺(n)} G·O`.
    pub occluded: Rgb,
    /// `∫_{Ω⁺(n)} G·(1 − O)`.
    pub unoccluded: Rgb,
    pub occluded_stderr: Rgb,
    pub unoccluded_stderr: Rgb,
}

/// Monte-Carlo estimate of the occluded and visible parts of an SG over the
/// upper hemisphere of `n` at `x`.
pub fn mc_sg_integral(sg: &SphericalGaussian, spheres: &[Sphere], x: &Vec3, n: &Vec3, cfg: &OracleConfig) -> Result<McSgIntegral> {
    if cfg.sample_count == 0 {
        return Err(invalid("oracle needs at least one sample"));
    }
    let mut rng = cfg.rng();
    let mass = sphere_mass(sg.sharpness);
    let mut occ = Moments::default();
    let mut vis = Moments::default();
    for _ in 0..cfg.sample_count {
        let (w, weight) = match cfg.sampling {
            Sampling::UniformHemisphere => {
                let w = sample_uniform(n, &mut rng);
                (w, sg.shape(&w) * TAU)
            }
            Sampling::CosineWeighted => {
                let w = sample_cosine(n, &mut rng);
                let c = w.dot(n);
                (w, if c > 0.0 { sg.shape(&w) * PI / c } else { 0.0 })
            }
            Sampling::Lobe => {
                let w = sample_lobe(&sg.axis, sg.sharpness, &mut rng);
                (w, if w.dot(n) > 0.0 { mass } else { 0.0 })
            }
        };
        let (o, v) = if weight > 0.0 {
            if occluded(x, &w, spheres) {
                (weight, 0.0)
            } else {
                (0.0, weight)
            }
        } else {
            (0.0, 0.0)
        };
        occ.push(Rgb::repeat(o));
        vis.push(Rgb::repeat(v));
    }
    let amp = sg.amplitude;
    Ok(McSgIntegral {
        occluded: occ.mean.component_mul(&amp),
        unoccluded: vis.mean.component_mul(&amp),
        occluded_stderr: occ.stderr().component_mul(&amp.abs()),
        unoccluded_stderr: vis.stderr().component_mul(&amp.abs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPixel {
    pub rgb: Rgb,
    pub stderr: Rgb,
    /// The object (not the hand or background) is visible at this pixel.
    pub object: bool,
}

/// Direct-light estimate of one pixel: environment radiance in visible
/// directions, `L_i` in hand-occluded ones, times BRDF and true cosine.
pub fn mc_render_pixel(
    renderer: &Renderer,
    scene: &Scene,
    prep: &PreparedFrame,
    pixel: (usize, usize),
    background: Rgb,
    cfg: &OracleConfig,
) -> McPixel {
    let (px, py) = pixel;
    let hit = renderer.trace(prep, px as f64 + 0.5, py as f64 + 0.5);
    let env = |w: &Vec3| -> Rgb { prep.lobes.iter().map(|l| l.eval(w)).sum() };
    let mut rng = cfg.rng();
    let mut acc = Moments::default();
    match hit.sample {
        Some(s) if hit.object_visible() => {
            let params = scene.material.params(s.uv);
            let n = s.normal;
            let spec = specular_lobe(&params, &n, &s.view_dir).lobe;
            let p_spec = if cfg.sampling == Sampling::Lobe && params.specular != Rgb::zeros() { 0.5 } else { 0.0 };
            let spec_mass = sphere_mass(spec.sharpness);
            for _ in 0..cfg.sample_count {
                let (w, pdf) = match cfg.sampling {
                    Sampling::UniformHemisphere => (sample_uniform(&n, &mut rng), 1.0 / TAU),
                    _ => {
                        let w = if rng.uniform() < p_spec {
                            sample_lobe(&spec.axis, spec.sharpness, &mut rng)
                        } else {
                            sample_cosine(&n, &mut rng)
                        };
                        let c = w.dot(&n).max(0.0);
                        (w, (1.0 - p_spec) * c / PI + p_spec * spec.shape(&w) / spec_mass)
                    }
                };
                let c = w.dot(&n);
                if c <= 0.0 || pdf <= 0.0 {
                    acc.push(Rgb::zeros());
                    continue;
                }
                let light = if occluded(&s.position, &w, &prep.spheres) { scene.material.indirect } else { env(&w) };
                let f = brdf_unchecked(&params, &n, &s.view_dir, &w).value;
                acc.push(light.component_mul(&f) * (c / pdf));
            }
            McPixel { rgb: acc.mean, stderr: acc.stderr(), object: true }
        }
        _ => {
            let ray = prep.camera.pixel_ray(px, py);
            let Some((_, n_world)) = prep.hand_normal(&ray) else {
                return McPixel { rgb: background, stderr: Rgb::zeros(), object: false };
            };
            let n = prep.pose.rotation.transpose() * n_world;
            let albedo = rgb(HAND_ALBEDO[0], HAND_ALBEDO[1], HAND_ALBEDO[2]);
            for _ in 0..cfg.sample_count {
                let w = sample_cosine(&n, &mut rng);
                acc.push(env(&w).component_mul(&albedo));
            }
            McPixel { rgb: acc.mean, stderr: acc.stderr(), object: false }
        }
    }
}

/// One randomized occlusion query.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionCase {
    pub id: u64,
    pub sg: SphericalGaussian,
    pub point: Vec3,
    pub normal: Vec3,
    pub spheres: Vec<Sphere>,
}

impl OcclusionCase {
    pub fn query(&self) -> OcclusionQuery {
        OcclusionQuery { point: self.point, normal: self.normal, spheres: self.spheres.clone() }
    }
}

/// Random query: `η ∈ [5, 100]`, one to five spheres whose caps have
/// half-angles in `[5°, 60°]` and axes within the lobe's bulk and above the
/// horizon, so every case carries a measurable occluded mass.
pub fn random_occlusion_case(seed: u64, id: u64) -> OcclusionCase {
    let mut rng = OracleConfig { sample_count: 1, seed, sampling: Sampling::Lobe, stream: id }.rng();
    let normal = Vec3::z();
    let eta = 5.0 + 95.0 * rng.uniform();
    let tilt = (50.0f64).to_radians() * rng.uniform();
    let axis = frame_dir(&normal, cos(tilt), TAU * rng.uniform());
    let reach = significant_radius(eta, 0.1);
    let count = 1 + (rng.uniform() * 5.0) as usize;
    let mut spheres = Vec::with_capacity(count);
    while spheres.len() < count {
        let half = (5.0f64 + 55.0 * rng.uniform()).to_radians();
        let off = reach * sqrt(rng.uniform());
        let dir = frame_dir(&axis, cos(off), TAU * rng.uniform());
        if dir.dot(&normal) < cos(FRAC_PI_2 * 80.0 / 90.0) {
            continue;
        }
        let dist = 0.05 + 0.45 * rng.uniform();
        spheres.push(Sphere::new(dir * dist, dist * sin(half)));
    }
    let sg = SphericalGaussian::from_parts(axis, eta, Rgb::repeat(1.0));
    OcclusionCase { id, sg, point: Vec3::zeros(), normal, spheres }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseComparison {
    pub analytic: f64,
    pub mc: f64,
    pub mc_stderr: f64,
    pub rel_err: f64,
}

/// Analytic occluded integral vs the lobe-sampled oracle for one case.
pub fn compare_case(engine: &OcclusionEngine, case: &OcclusionCase, samples: usize, seed: u64) -> Result<CaseComparison> {
    let a = engine.occluded_sg_integral(&case.sg, &case.query())?.occluded.x;
    let cfg = OracleConfig::new(samples, seed, Sampling::Lobe)?.with_stream(case.id);
    let m = mc_sg_integral(&case.sg, &case.spheres, &case.point, &case.normal, &cfg)?;
    let rel_err = if m.occluded.x > 0.0 { (a - m.occluded.x).abs() / m.occluded.x } else if a == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(CaseComparison { analytic: a, mc: m.occluded.x, mc_stderr: m.occluded_stderr.x, rel_err })
}

#[cfg(feature = "std")]
pub use bench::*;

#[cfg(feature = "std")]
mod bench {
    use super::*;
    use crate::geometry::ray_tests;
    use crate::occlusion::{caps_for_point, Scratch};
    use std::time::Instant;

    #[derive(Debug, Clone, PartialEq)]
    pub struct BenchRow {
        pub case_id: u64,
        pub eta: f64,
        pub n_spheres: usize,
        pub analytic_value: f64,
        pub mc_value: f64,
        pub mc_stderr: f64,
        pub rel_err: f64,
        /// Per query with the patch layout already built for this sharpness.
        pub t_analytic_us: f64,
        pub t_mc_us: f64,
        /// Ray–sphere tests issued while timing the analytic path.
        pub analytic_ray_tests: u64,
    }

    pub const BENCH_CSV_HEADER: [&str; 9] =
        ["case_id", "eta", "n_spheres", "analytic_value", "mc_value", "mc_stderr", "rel_err", "t_analytic_us", "t_mc_us"];

    /// Time the analytic occlusion against the MC oracle on each case.
    pub fn bench_occlusion(engine: &OcclusionEngine, cases: &[OcclusionCase], mc_samples: usize, seed: u64) -> Result<Vec<BenchRow>> {
        let mut rows = Vec::with_capacity(cases.len());
        let mut scratch = Scratch::new(engine.resolution);
        for case in cases {
            let layout = engine.layout(case.sg.sharpness);
            let full = case.sg.integral_sphere().x;
            let before = ray_tests();
            let reps = 20;
            let start = Instant::now();
            let mut analytic = 0.0;
            for _ in 0..reps {
                let (caps, _) = caps_for_point(&case.point, &case.normal, &case.spheres)?;
                analytic = full * layout.occlusion(&case.sg.axis, &caps, &case.normal, &mut scratch, false).fraction;
            }
            let t_analytic_us = start.elapsed().as_secs_f64() * 1e6 / reps as f64;
            let analytic_ray_tests = ray_tests() - before;

            let cfg = OracleConfig::new(mc_samples, seed, Sampling::Lobe)?.with_stream(case.id);
            let start = Instant::now();
            let m = mc_sg_integral(&case.sg, &case.spheres, &case.point, &case.normal, &cfg)?;
            let t_mc_us = start.elapsed().as_secs_f64() * 1e6;
            let mc = m.occluded.x;
            rows.push(BenchRow {
                case_id: case.id,
                eta: case.sg.sharpness,
                n_spheres: case.spheres.len(),
                analytic_value: analytic,
                mc_value: mc,
                mc_stderr: m.occluded_stderr.x,
                rel_err: if mc > 0.0 { (analytic - mc).abs() / mc } else { 0.0 },
                t_analytic_us,
                t_mc_us,
                analytic_ray_tests,
            });
        }
        Ok(rows)
    }
}
