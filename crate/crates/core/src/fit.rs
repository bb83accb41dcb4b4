//! Recovery of albedo, roughness, specular reflectance, lighting amplitudes
//! and hand-reflected light from posed observations, with geometry fixed.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::brdf::specular_lobe;
use crate::compositor::eikonal_loss;
use crate::error::{invalid, Error, Result};
use crate::material::{bilinear_weights, Material, SurfaceParams};
use crate::math::{pow, softplus, splat, sqrt, Rgb, Vec3, PI};
use crate::occlusion::Scratch;
use crate::par::map_init;
use crate::raster::Image;
use crate::sdf::min_along_ray;
use crate::sg::SphericalGaussian;
use crate::shading::{light_sum, specular_integrals, RenderOutput, Renderer, Scene, SurfaceSample};

pub const LAMBDA_MASK2: f64 = 100.0;
pub const LAMBDA_EIKONAL2: f64 = 0.1;
/// Slope of the soft silhouette penalty.
pub const MASK_SHARPNESS: f64 = 50.0;
pub const ROUGHNESS_MIN: f64 = 0.05;
/// Lower bound on `s`; at zero the specular lobe vanishes and so would its
/// gradient.
pub const SPECULAR_MIN: f64 = 1e-3;
const MASK_RAY_SAMPLES: usize = 128;
const EIKONAL_LATTICE: usize = 8;

/// Per-ray silhouette penalty `ln(1 + e^(−50 S))/50` for the minimum SDF
/// value `S` along the ray.
pub fn mask_ray_term(s_min: f64) -> f64 {
    softplus(-MASK_SHARPNESS * s_min) / MASK_SHARPNESS
}

/// One observed frame. Masks are stored binarized.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFrame {
    /// Index into the scene's frames.
    pub frame: usize,
    pub rgb: Image<Rgb>,
    pub object_mask: Image<f64>,
    pub hand_object_mask: Image<f64>,
}

impl ObservedFrame {
    pub fn new(frame: usize, rgb: Image<Rgb>, object_mask: Image<f64>, hand_object_mask: Image<f64>) -> Result<Self> {
        let dims = (rgb.width, rgb.height);
        if (object_mask.width, object_mask.height) != dims || (hand_object_mask.width, hand_object_mask.height) != dims {
            return Err(invalid("observation image and masks differ in size"));
        }
        if rgb.has_non_finite() || object_mask.has_non_finite() || hand_object_mask.has_non_finite() {
            return Err(invalid(format!("observation for frame {frame} contains non-finite values")));
        }
        let binarize = |m: Image<f64>| Image { data: m.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(), ..m };
        Ok(Self { frame, rgb, object_mask: binarize(object_mask), hand_object_mask: binarize(hand_object_mask) })
    }

    pub fn from_render(frame: usize, out: &RenderOutput) -> Result<Self> {
        Self::new(frame, out.rgb.clone(), out.mask.clone(), out.hand_object_mask.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observation {
    pub frames: Vec<ObservedFrame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub mask: f64,
    pub eikonal: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(rgb: f64, mask: f64, eikonal: f64) -> Self {
        Self { rgb, mask, eikonal, total: rgb + LAMBDA_MASK2 * mask + LAMBDA_EIKONAL2 * eikonal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// Loss on the pixels and rays sampled for this step.
    pub batch: LossBreakdown,
    /// Loss on the fixed monitoring set, at window boundaries.
    pub monitor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub material: Material,
    pub env_amplitudes: Vec<Rgb>,
    pub step: usize,
    pub loss_history: Vec<LossRecord>,
}

impl FitState {
    pub fn new(material: Material, env_amplitudes: Vec<Rgb>) -> Self {
        Self { material, env_amplitudes, step: 0, loss_history: Vec::new() }
    }

    /// The parameters a scene was rendered with.
    pub fn from_scene(scene: &Scene) -> Self {
        Self::new(scene.material.clone(), scene.environment.amplitudes())
    }

    /// `base` with this state's material and lighting amplitudes.
    pub fn apply(&self, base: &Scene) -> Scene {
        let mut s = base.clone();
        s.material = self.material.clone();
        s.environment.set_amplitudes(&self.env_amplitudes);
        s
    }

    pub fn project(&mut self) {
        let unit = |c: &mut Rgb| c.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self.material.albedo.texels.iter_mut().for_each(unit);
        self.material.roughness.texels.iter_mut().for_each(|r| *r = r.clamp(ROUGHNESS_MIN, 1.0));
        self.material.specular.iter_mut().for_each(|v| *v = v.clamp(SPECULAR_MIN, 1.0));
        self.material.indirect.iter_mut().for_each(|v| *v = v.max(0.0));
        for a in &mut self.env_amplitudes {
            a.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    pub fn in_bounds(&self) -> bool {
        let m = &self.material;
        m.albedo.texels.iter().all(|c| c.iter().all(|v| (0.0..=1.0).contains(v)))
            && m.roughness.texels.iter().all(|r| (ROUGHNESS_MIN..=1.0).contains(r))
            && m.specular.iter().all(|v| (SPECULAR_MIN..=1.0).contains(v))
            && m.indirect.iter().all(|v| *v >= 0.0)
            && self.env_amplitudes.iter().all(|a| a.iter().all(|v| *v >= 0.0))
    }
}

/// Parameter groups held constant during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Freeze {
    pub albedo: bool,
    pub roughness: bool,
    pub specular: bool,
    pub indirect: bool,
    pub env: bool,
}

impl Freeze {
    pub const ALL: Self = Self { albedo: true, roughness: true, specular: true, indirect: true, env: true };
    pub const NONE: Self = Self { albedo: false, roughness: false, specular: false, indirect: false, env: false };

    pub fn all_frozen(&self) -> bool {
        *self == Self::ALL
    }
}

impl Default for Freeze {
    /// Lighting amplitudes are treated as known.
    fn default() -> Self {
        Self { env: true, ..Self::NONE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iters: usize,
    pub lr: f64,
    /// Step size reached at the last iteration (exponential decay).
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pixels and silhouette rays drawn per iteration.
    pub batch: usize,
    pub seed: u64,
    pub freeze: Freeze,
    /// Iterations between monitor-loss checks.
    pub window: usize,
    /// Allowed relative rise of the monitor loss between checks.
    pub window_tolerance: f64,
    /// Abort when the monitor loss exceeds this multiple of its start value.
    pub divergence: f64,
    /// Central-difference step for the non-albedo parameters.
    pub fd_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            lr: 1e-2,
            lr_final: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch: 1024,
            seed: 0,
            freeze: Freeze::default(),
            window: 50,
            window_tolerance: 0.02,
            divergence: 10.0,
            fd_step: 1e-4,
        }
    }
}

/// An aborted fit and the state it reached.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub error: Error,
    pub state: FitState,
}

impl core::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.state.step)
    }
}

/// Loss gradient, shaped like the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub albedo: Vec<Rgb>,
    pub roughness: Vec<f64>,
    pub specular: Rgb,
    pub indirect: Rgb,
    pub env: Vec<Rgb>,
}

#[derive(Debug, Clone)]
struct FrameLight {
    lobes: Vec<SphericalGaussian>,
    kappa: f64,
}

#[derive(Debug, Clone)]
struct PixelRecord {
    slot: usize,
    target: Rgb,
    sample: SurfaceSample,
    /// `T_j/π` per lobe.
    diffuse: Vec<f64>,
    fractions: Vec<f64>,
    albedo_w: [(usize, f64); 4],
    rough_w: [(usize, f64); 4],
}

#[derive(Debug, Clone)]
struct PixelGrad {
    loss: f64,
    albedo: [(usize, Rgb); 4],
    roughness: [(usize, f64); 4],
    specular: Rgb,
    indirect: Rgb,
    env: Vec<Rgb>,
}

/// Everything about the observations that does not change while fitting:
/// surface samples, occlusion transfers and silhouette-ray SDF minima.
#[derive(Debug, Clone)]
pub struct FitProblem {
    frames: Vec<FrameLight>,
    pixels: Vec<PixelRecord>,
    mask_rays: Vec<f64>,
    eikonal: f64,
    observed: Vec<bool>,
    albedo_dims: (usize, usize),
    rough_dims: (usize, usize),
    occlusion: bool,
}

impl FitProblem {
    /// With `occlusion` false the hand is ignored when shading (every
    /// occlusion fraction is zero).
    pub fn new(renderer: &Renderer, scene: &Scene, obs: &Observation, occlusion: bool) -> Result<Self> {
        if obs.frames.is_empty() {
            return Err(invalid("no observed frames"));
        }
        let mat = &scene.material;
        let albedo_dims = (mat.albedo.width, mat.albedo.height);
        let rough_dims = (mat.roughness.width, mat.roughness.height);
        let sdf = scene.object_sdf();
        let bounds = scene.mesh.bounds();
        let (center, radius) = (bounds.center(), bounds.extent().norm() / 2.0);
        let res = renderer.engine.resolution;
        let mut frames = Vec::with_capacity(obs.frames.len());
        let mut pixels = Vec::new();
        let mut mask_rays = Vec::new();
        for (slot, of) in obs.frames.iter().enumerate() {
            let prep = renderer.prepare(scene, of.frame)?;
            let cam = prep.camera;
            if (cam.width, cam.height) != (of.rgb.width, of.rgb.height) {
                return Err(invalid(format!("observation {} does not match the camera resolution", of.frame)));
            }
            let rows = map_init(
                cam.height,
                || Scratch::new(res),
                |scratch, y| -> Result<(Vec<PixelRecord>, Vec<f64>)> {
                    let mut px = Vec::new();
                    let mut rays = Vec::new();
                    for x in 0..cam.width {
                        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                        let hit = renderer.trace(&prep, fx, fy);
                        let both = hit.object_t.is_some() && of.object_mask.get(x, y) > 0.5;
                        if !both {
                            let local = cam.ray(fx, fy).transformed_inverse(&prep.pose);
                            let far = (local.origin - center).norm() + radius;
                            rays.push(min_along_ray(&sdf, &local, 0.0, far, MASK_RAY_SAMPLES));
                            continue;
                        }
                        let Some(sample) = hit.sample.filter(|_| hit.object_visible() && of.hand_object_mask.get(x, y) > 0.5)
                        else {
                            continue;
                        };
                        let t = renderer.transfer(&prep, &sample, occlusion, scratch)?;
                        px.push(PixelRecord {
                            slot,
                            target: of.rgb.get(x, y),
                            sample,
                            diffuse: t.diffuse.iter().map(|d| d / PI).collect(),
                            fractions: t.fractions,
                            albedo_w: bilinear_weights(albedo_dims.0, albedo_dims.1, sample.uv),
                            rough_w: bilinear_weights(rough_dims.0, rough_dims.1, sample.uv),
                        });
                    }
                    Ok((px, rays))
                },
            );
            for row in rows {
                let (px, rays) = row?;
                pixels.extend(px);
                mask_rays.extend(rays);
            }
            frames.push(FrameLight { lobes: prep.lobes, kappa: prep.kappa });
        }
        let mut observed = vec![false; albedo_dims.0 * albedo_dims.1];
        for p in &pixels {
            for &(k, w) in &p.albedo_w {
                if w > 0.0 {
                    observed[k] = true;
                }
            }
        }
        let n = EIKONAL_LATTICE;
        let lo = center - bounds.extent() * 0.75;
        let probes: Vec<Vec3> = (0..n * n * n)
            .map(|k| {
                let c = Vec3::new((k % n) as f64, ((k / n) % n) as f64, (k / (n * n)) as f64).add_scalar(0.5) / n as f64;
                lo + (bounds.extent() * 1.5).component_mul(&c)
            })
            .collect();
        let eikonal = eikonal_loss(&sdf, &probes, 1e-3 * radius);
        Ok(Self { frames, pixels, mask_rays, eikonal, observed, albedo_dims, rough_dims, occlusion })
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn mask_ray_count(&self) -> usize {
        self.mask_rays.len()
    }

    pub fn occlusion(&self) -> bool {
        self.occlusion
    }

    /// Albedo texels reached by at least one fitted pixel.
    pub fn observed_texels(&self) -> &[bool] {
        &self.observed
    }

    fn check(&self, state: &FitState) -> Result<()> {
        let m = &state.material;
        if (m.albedo.width, m.albedo.height) != self.albedo_dims || (m.roughness.width, m.roughness.height) != self.rough_dims {
            return Err(invalid("fit state texture sizes differ from the scene"));
        }
        if state.env_amplitudes.len() != self.frames[0].lobes.len() {
            return Err(invalid("fit state has the wrong number of lighting amplitudes"));
        }
        Ok(())
    }

    fn lights(&self, state: &FitState) -> Vec<FrameLight> {
        self.frames
            .iter()
            .map(|f| FrameLight {
                lobes: f.lobes.iter().zip(&state.env_amplitudes).map(|(l, a)| SphericalGaussian { amplitude: *a, ..*l }).collect(),
                kappa: f.kappa,
            })
            .collect()
    }

    fn mask_loss(&self, rays: &[usize]) -> f64 {
        if rays.is_empty() {
            log::warn!("no silhouette rays; mask loss set to 0");
            return 0.0;
        }
        rays.iter().map(|&k| mask_ray_term(self.mask_rays[k])).sum::<f64>() / rays.len() as f64
    }

    /// Loss on the given pixels and silhouette rays (indices into the
    /// problem's pools).
    pub fn loss(&self, state: &FitState, pixels: &[usize], rays: &[usize]) -> Result<LossBreakdown> {
        self.check(state)?;
        let lights = self.lights(state);
        let rgb = if pixels.is_empty() {
            log::warn!("no pixels inside the object and hand-object masks; colour loss set to 0");
            0.0
        } else {
            let per = map_init(pixels.len(), || (), |_, i| {
                let p = &self.pixels[pixels[i]];
                let l = &lights[p.slot];
                let params = state.material.params(p.sample.uv);
                let (q, factor, _) = specular_integrals(&l.lobes, &p.sample, &params);
                let ld = light_sum(&l.lobes, l.kappa, &state.material.indirect, &p.fractions, &p.diffuse);
                let ls = light_sum(&l.lobes, l.kappa, &state.material.indirect, &p.fractions, &q);
                (radiance(&params.albedo, &factor, &ld, &ls) - p.target).norm()
            });
            per.iter().sum::<f64>() / pixels.len() as f64
        };
        Ok(LossBreakdown::new(rgb, self.mask_loss(rays), self.eikonal))
    }

    /// Loss and gradient on the given pixels and rays. Albedo and lighting
    /// amplitudes are differentiated analytically, everything else by
    /// central differences of the pixel radiance.
    pub fn gradient(&self, state: &FitState, freeze: Freeze, h: f64, pixels: &[usize], rays: &[usize]) -> Result<(LossBreakdown, Gradient)> {
        self.check(state)?;
        let lights = self.lights(state);
        let mut g = Gradient {
            albedo: vec![Rgb::zeros(); state.material.albedo.len()],
            roughness: vec![0.0; state.material.roughness.len()],
            specular: Rgb::zeros(),
            indirect: Rgb::zeros(),
            env: vec![Rgb::zeros(); state.env_amplitudes.len()],
        };
        if pixels.is_empty() {
            log::warn!("no pixels inside the object and hand-object masks; colour loss set to 0");
            return Ok((LossBreakdown::new(0.0, self.mask_loss(rays), self.eikonal), g));
        }
        let per = map_init(pixels.len(), || (), |_, i| self.pixel_gradient(state, &lights, &self.pixels[pixels[i]], freeze, h));
        let scale = 1.0 / pixels.len() as f64;
        let mut rgb = 0.0;
        for p in per {
            rgb += p.loss;
            for (k, v) in p.albedo {
                g.albedo[k] += v * scale;
            }
            for (k, v) in p.roughness {
                g.roughness[k] += v * scale;
            }
            g.specular += p.specular * scale;
            g.indirect += p.indirect * scale;
            for (a, v) in g.env.iter_mut().zip(&p.env) {
                *a += v * scale;
            }
        }
        Ok((LossBreakdown::new(rgb * scale, self.mask_loss(rays), self.eikonal), g))
    }

    fn pixel_gradient(&self, state: &FitState, lights: &[FrameLight], p: &PixelRecord, freeze: Freeze, h: f64) -> PixelGrad {
        let l = &lights[p.slot];
        let li = state.material.indirect;
        let params = state.material.params(p.sample.uv);
        let (q, factor, _) = specular_integrals(&l.lobes, &p.sample, &params);
        let ld = light_sum(&l.lobes, l.kappa, &li, &p.fractions, &p.diffuse);
        let ls = light_sum(&l.lobes, l.kappa, &li, &p.fractions, &q);
        let raw = params.albedo.component_mul(&ld) + factor.component_mul(&ls);
        let r = raw.sup(&Rgb::zeros()) - p.target;
        let norm = r.norm();
        let u = if norm > 0.0 { r / norm } else { Rgb::zeros() };
        let live = u.zip_map(&raw, |a, b| if b > 0.0 { a } else { 0.0 });
        let mut out = PixelGrad {
            loss: norm,
            albedo: [(0, Rgb::zeros()); 4],
            roughness: [(0, 0.0); 4],
            specular: Rgb::zeros(),
            indirect: Rgb::zeros(),
            env: Vec::new(),
        };
        if norm == 0.0 {
            return out;
        }
        if !freeze.albedo {
            let d = ld.component_mul(&live);
            out.albedo = p.albedo_w.map(|(k, w)| (k, d * w));
        }
        if !freeze.roughness {
            let at = |rough: f64| {
                let pp = SurfaceParams { roughness: rough, ..params };
                let (q, f, _) = specular_integrals(&l.lobes, &p.sample, &pp);
                radiance(&params.albedo, &f, &ld, &light_sum(&l.lobes, l.kappa, &li, &p.fractions, &q))
            };
            let d = (at(params.roughness + h) - at(params.roughness - h)).dot(&u) / (2.0 * h);
            out.roughness = p.rough_w.map(|(k, w)| (k, d * w));
        }
        if !freeze.specular {
            let at = |s: f64| {
                let pp = SurfaceParams { specular: params.specular.add_scalar(s), ..params };
                radiance(&params.albedo, &specular_lobe(&pp, &p.sample.normal, &p.sample.view_dir).factor, &ld, &ls)
            };
            out.specular = (at(h) - at(-h)).component_mul(&u) / (2.0 * h);
        }
        if !freeze.indirect {
            let at = |s: f64| {
                let li = li.add_scalar(s);
                let ld = light_sum(&l.lobes, l.kappa, &li, &p.fractions, &p.diffuse);
                let ls = light_sum(&l.lobes, l.kappa, &li, &p.fractions, &q);
                radiance(&params.albedo, &factor, &ld, &ls)
            };
            out.indirect = (at(h) - at(-h)).component_mul(&u) / (2.0 * h);
        }
        if !freeze.env {
            out.env = (0..l.lobes.len())
                .map(|j| {
                    let d = params.albedo * p.diffuse[j] + factor * q[j];
                    d.component_mul(&live) * (1.0 - p.fractions[j])
                })
                .collect();
        }
        out
    }
}

fn radiance(albedo: &Rgb, factor: &Rgb, ld: &Rgb, ls: &Rgb) -> Rgb {
    (albedo.component_mul(ld) + factor.component_mul(ls)).sup(&Rgb::zeros())
}

/// Flat parameter vector and the index range of each group.
struct Layout {
    albedo: Range<usize>,
    roughness: Range<usize>,
    specular: Range<usize>,
    indirect: Range<usize>,
    env: Range<usize>,
}

impl Layout {
    fn new(state: &FitState) -> Self {
        let a = state.material.albedo.len() * 3;
        let r = a + state.material.roughness.len();
        let e = r + 6 + state.env_amplitudes.len() * 3;
        Self { albedo: 0..a, roughness: a..r, specular: r..r + 3, indirect: r + 3..r + 6, env: r + 6..e }
    }

    fn len(&self) -> usize {
        self.env.end
    }

    fn frozen(&self, freeze: Freeze) -> Vec<bool> {
        let mut out = vec![false; self.len()];
        for (range, f) in [
            (&self.albedo, freeze.albedo),
            (&self.roughness, freeze.roughness),
            (&self.specular, freeze.specular),
            (&self.indirect, freeze.indirect),
            (&self.env, freeze.env),
        ] {
            out[range.clone()].iter_mut().for_each(|v| *v = f);
        }
        out
    }

    fn flatten(&self, a: &[Rgb], r: &[f64], s: &Rgb, li: &Rgb, env: &[Rgb]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(a.iter().flat_map(|c| c.iter().copied()));
        out.extend_from_slice(r);
        out.extend(s.iter().chain(li.iter()).copied());
        out.extend(env.iter().flat_map(|c| c.iter().copied()));
        out
    }

    fn write(&self, x: &[f64], state: &mut FitState) {
        let rgb_at = |k: usize| Rgb::new(x[k], x[k + 1], x[k + 2]);
        for (i, t) in state.material.albedo.texels.iter_mut().enumerate() {
            *t = rgb_at(self.albedo.start + 3 * i);
        }
        state.material.roughness.texels.copy_from_slice(&x[self.roughness.clone()]);
        state.material.specular = rgb_at(self.specular.start);
        state.material.indirect = rgb_at(self.indirect.start);
        for (i, a) in state.env_amplitudes.iter_mut().enumerate() {
            *a = rgb_at(self.env.start + 3 * i);
        }
    }
}

fn params_of(layout: &Layout, s: &FitState) -> Vec<f64> {
    let m = &s.material;
    layout.flatten(&m.albedo.texels, &m.roughness.texels, &m.specular, &m.indirect, &s.env_amplitudes)
}

fn draw(rng: &mut ChaCha8Rng, pool: usize, count: usize) -> Vec<usize> {
    let mut v = index::sample(rng, pool, count.min(pool)).into_vec();
    v.sort_unstable();
    v
}

/// Minimize the loss from `init`. Aborts with the reached state if the
/// loss on a fixed monitoring set rises across a window or diverges.
#[allow(clippy::result_large_err)]
pub fn fit(problem: &FitProblem, init: FitState, cfg: &FitConfig) -> core::result::Result<FitState, FitFailure> {
    let mut state = init;
    let fail = |error: Error, state: &FitState| FitFailure { error, state: state.clone() };
    if let Err(e) = problem.check(&state) {
        return Err(fail(e, &state));
    }
    if cfg.iters == 0 || cfg.batch == 0 || cfg.window == 0 || !(cfg.lr > 0.0 && cfg.lr_final > 0.0 && cfg.fd_step > 0.0) {
        return Err(fail(invalid("iterations, batch, window and step sizes must be positive"), &state));
    }
    state.project();
    let layout = Layout::new(&state);
    let frozen = layout.frozen(cfg.freeze);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let monitor_px = draw(&mut rng, problem.pixel_count(), cfg.batch);
    let monitor_rays = draw(&mut rng, problem.mask_ray_count(), cfg.batch);
    let monitor = |s: &FitState| problem.loss(s, &monitor_px, &monitor_rays).map(|l| l.total);
    let start = monitor(&state).map_err(|e| fail(e, &state))?;
    let mut last = start;
    let mut m = vec![0.0; layout.len()];
    let mut v = vec![0.0; layout.len()];
    for it in 0..cfg.iters {
        let px = draw(&mut rng, problem.pixel_count(), cfg.batch);
        let rays = draw(&mut rng, problem.mask_ray_count(), cfg.batch);
        let batch = if cfg.freeze.all_frozen() {
            problem.loss(&state, &px, &rays).map_err(|e| fail(e, &state))?
        } else {
            let (loss, g) = problem.gradient(&state, cfg.freeze, cfg.fd_step, &px, &rays).map_err(|e| fail(e, &state))?;
            let grad = layout.flatten(&g.albedo, &g.roughness, &g.specular, &g.indirect, &g.env);
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(fail(Error::Numerical(format!("non-finite gradient at step {}", state.step)), &state));
            }
            let lr = cfg.lr * pow(cfg.lr_final / cfg.lr, it as f64 / cfg.iters as f64);
            let t = (it + 1) as f64;
            let (c1, c2) = (1.0 - pow(cfg.beta1, t), 1.0 - pow(cfg.beta2, t));
            let mut x = params_of(&layout, &state);
            for k in 0..x.len() {
                if frozen[k] {
                    continue;
                }
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
                x[k] -= lr * (m[k] / c1) / (sqrt(v[k] / c2) + cfg.epsilon);
            }
            layout.write(&x, &mut state);
            state.project();
            loss
        };
        if !batch.total.is_finite() {
            return Err(fail(Error::Numerical(format!("non-finite loss at step {}", state.step)), &state));
        }
        state.step += 1;
        let checkpoint = state.step.is_multiple_of(cfg.window);
        let mon = if checkpoint { Some(monitor(&state).map_err(|e| fail(e, &state))?) } else { None };
        state.loss_history.push(LossRecord { step: state.step, batch, monitor: mon });
        if let Some(now) = mon {
            if now > cfg.divergence * start {
                return Err(fail(Error::Diverged(format!("loss {now:.6e} exceeds {}x the start value {start:.6e}", cfg.divergence)), &state));
            }
            if now > last * (1.0 + cfg.window_tolerance) + 1e-12 {
                return Err(fail(
                    Error::Diverged(format!("loss rose from {last:.6e} to {now:.6e} over steps {}..{}", state.step - cfg.window, state.step)),
                    &state,
                ));
            }
            last = now;
        }
    }
    Ok(state)
}

/// Per-channel RMSE between two albedo grids over the selected texels.
pub fn albedo_rmse(a: &[Rgb], b: &[Rgb], mask: Option<&[bool]>) -> f64 {
    let mut se = 0.0;
    let mut n = 0usize;
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        se += (x - y).norm_squared();
        n += 3;
    }
    if n == 0 {
        0.0
    } else {
        sqrt(se / n as f64)
    }
}

/// Starting point with flat textures and the scene's lighting.
pub fn flat_start(scene: &Scene, albedo: f64, roughness: f64, specular: f64, indirect: f64) -> FitState {
    let mut m = scene.material.clone();
    m.albedo.texels.iter_mut().for_each(|t| *t = splat(albedo));
    m.roughness.texels.iter_mut().for_each(|t| *t = roughness);
    m.specular = splat(specular);
    m.indirect = splat(indirect);
    let mut s = FitState::new(m, scene.environment.amplitudes());
    s.project();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{demo_scene, DemoOptions};
    use crate::shading::RenderOptions;

    fn setup(occlusion: bool) -> (Scene, FitProblem) {
        let scene = demo_scene(&DemoOptions { frames: 2, width: 20, height: 20, with_hand: true }).unwrap();
        let r = Renderer::new(&scene);
        let frames = (0..2)
            .map(|k| ObservedFrame::from_render(k, &r.render_frame(&scene, k, &RenderOptions::default()).unwrap()).unwrap())
            .collect();
        let p = FitProblem::new(&r, &scene, &Observation { frames }, occlusion).unwrap();
        (scene, p)
    }

    #[test]
    fn mask_term_values() {
        assert!((mask_ray_term(0.0) - core::f64::consts::LN_2 / 50.0).abs() < 1e-15);
        assert!((mask_ray_term(0.0) - 0.013863).abs() < 1e-6);
        assert!(mask_ray_term(1.0) < 1e-20);
    }

    #[test]
    fn projection_restores_bounds() {
        let scene = demo_scene(&DemoOptions { frames: 1, width: 8, height: 8, with_hand: false }).unwrap();
        let mut s = FitState::from_scene(&scene);
        s.material.albedo.texels[0] = Rgb::new(-0.2, 1.4, 0.5);
        s.material.roughness.texels[3] = 0.0;
        s.material.specular = splat(-1.0);
        s.material.indirect = Rgb::new(-0.1, 0.2, 0.3);
        s.env_amplitudes[5] = splat(-2.0);
        assert!(!s.in_bounds());
        s.project();
        assert!(s.in_bounds());
        assert_eq!(s.material.albedo.texels[0], Rgb::new(0.0, 1.0, 0.5));
        assert_eq!(s.material.roughness.texels[3], ROUGHNESS_MIN);
    }

    #[test]
    fn observations_binarize_masks() {
        let rgb = Image::filled(2, 1, Rgb::zeros());
        let m = Image { width: 2, height: 1, data: vec![0.49, 0.5] };
        let o = ObservedFrame::new(0, rgb.clone(), m.clone(), m).unwrap();
        assert_eq!(o.object_mask.data, vec![0.0, 1.0]);
        let bad = Image { width: 2, height: 1, data: vec![0.0, f64::NAN] };
        assert!(ObservedFrame::new(0, rgb, bad.clone(), bad).is_err());
    }

    #[test]
    fn albedo_gradient_matches_differences() {
        let (scene, p) = setup(true);
        let mut s = flat_start(&scene, 0.5, 0.5, 0.0, 0.5);
        s.material.specular = Rgb::zeros();
        let all: Vec<usize> = (0..p.pixel_count()).collect();
        let (_, g) = p.gradient(&s, Freeze { albedo: false, ..Freeze::ALL }, 1e-4, &all, &[]).unwrap();
        let texels: Vec<usize> = (0..s.material.albedo.len()).filter(|&k| p.observed_texels()[k]).take(100).collect();
        assert!(texels.len() >= 20, "{} texels observed", texels.len());
        let h = 1e-6;
        for k in texels {
            for c in 0..3 {
                let mut plus = s.clone();
                plus.material.albedo.texels[k][c] += h;
                let mut minus = s.clone();
                minus.material.albedo.texels[k][c] -= h;
                let fd = (p.loss(&plus, &all, &[]).unwrap().rgb - p.loss(&minus, &all, &[]).unwrap().rgb) / (2.0 * h);
                let a = g.albedo[k][c];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(1e-6), "texel {k}/{c}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let (scene, p) = setup(true);
        let truth = FitState::from_scene(&scene);
        let all: Vec<usize> = (0..p.pixel_count()).collect();
        assert_eq!(p.loss(&truth, &all, &[]).unwrap().rgb, 0.0);
        let cfg = FitConfig { iters: 100, freeze: Freeze::NONE, ..FitConfig::default() };
        let out = fit(&p, truth.clone(), &cfg).unwrap();
        let l = Layout::new(&truth);
        let moved = params_of(&l, &out).iter().zip(params_of(&l, &truth)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved < 1e-3, "moved {moved}");
    }

    #[test]
    fn frozen_fit_changes_nothing() {
        let (scene, p) = setup(false);
        let init = flat_start(&scene, 0.5, 0.5, 0.04, 0.5);
        let cfg = FitConfig { iters: 60, freeze: Freeze::ALL, ..FitConfig::default() };
        let out = fit(&p, init.clone(), &cfg).unwrap();
        assert_eq!(out.material, init.material);
        assert_eq!(out.env_amplitudes, init.env_amplitudes);
        let monitors: Vec<f64> = out.loss_history.iter().filter_map(|r| r.monitor).collect();
        assert_eq!(monitors.len(), 1);
    }

    #[test]
    fn short_fit_reduces_loss_and_respects_bounds() {
        let (scene, p) = setup(true);
        let init = flat_start(&scene, 0.5, 0.5, 0.04, 0.5);
        let all: Vec<usize> = (0..p.pixel_count()).collect();
        let before = p.loss(&init, &all, &[]).unwrap().rgb;
        let cfg = FitConfig { iters: 150, batch: 256, ..FitConfig::default() };
        let out = fit(&p, init, &cfg).unwrap();
        assert!(out.in_bounds());
        assert!(p.loss(&out, &all, &[]).unwrap().rgb < 0.5 * before);
    }
}
