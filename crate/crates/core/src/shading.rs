//! SG shading of surface points and frame rendering.
//!
//! Shading runs in the object's canonical frame: camera rays, environment
//! lobes and hand spheres are brought into it per frame. Each environment
//! lobe's light is split by its occluded share `𝓕_j` into the direct part
//! and the hand's indirect radiance `L_i`, and the resulting lobes are
//! integrated against the diffuse and warped specular BRDF lobes times the
//! cosine lobe.

use alloc::vec;
use alloc::vec::Vec;

use crate::brdf::specular_lobe;
use crate::env::SGEnvironment;
use crate::error::{invalid, Error, Result};
use crate::geometry::{intersect_sphere, Bvh, Camera, Ray, RigidPose, TriangleMesh};
use crate::hand::{lbs_forward, power_partition, update_posed_spheres, HandPose, HandSphereSet, SkinnedHand, Sphere};
use crate::material::{Material, SurfaceParams};
use crate::math::{luminance, rgb, Rgb, Vec3, PI};
use crate::occlusion::{caps_for_point, OcclusionEngine, PatchLayout, Scratch, SphericalCap};
use crate::par::map_init;
use crate::raster::Image;
use crate::sdf::{BoxSdf, MeshSdf, Sdf};
use crate::sg::{hemisphere_mass, sphere_mass, SphericalGaussian, COSINE_AMPLITUDE, COSINE_OFFSET, COSINE_SHARPNESS};

/// Diffuse albedo used to draw hand pixels.
pub const HAND_ALBEDO: [f64; 3] = [0.70, 0.50, 0.33];

#[derive(Debug, Clone, PartialEq)]
pub struct HandRig {
    pub hand: SkinnedHand,
    /// Canonical spheres with their power cells.
    pub spheres: HandSphereSet,
}

impl HandRig {
    pub fn new(hand: SkinnedHand, seeds: &[Sphere]) -> Result<Self> {
        let spheres = power_partition(&hand, seeds)?;
        Ok(Self { hand, spheres })
    }

    /// Posed vertices, normals and refitted spheres (world frame).
    pub fn posed(&self, pose: &HandPose) -> Result<(Vec<Vec3>, Vec<Vec3>, Vec<Sphere>)> {
        let (v, n) = lbs_forward(&self.hand, pose)?;
        let set = update_posed_spheres(&self.spheres, &v, &n);
        Ok((v, n, set.spheres))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectShape {
    /// Signed distance from the triangle mesh itself.
    Mesh,
    /// Analytic box centred at the origin.
    Box { half_extents: Vec3 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub object_pose: RigidPose,
    pub hand_pose: Option<HandPose>,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mesh: TriangleMesh,
    pub shape: ObjectShape,
    pub frames: Vec<Frame>,
    pub environment: SGEnvironment,
    pub material: Material,
    pub hand: Option<HandRig>,
}

pub enum SceneSdf {
    Box(BoxSdf),
    Mesh(MeshSdf),
}

impl Sdf for SceneSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        match self {
            SceneSdf::Box(b) => b.distance(p),
            SceneSdf::Mesh(m) => m.distance(p),
        }
    }
}

impl Scene {
    pub fn object_sdf(&self) -> SceneSdf {
        match self.shape {
            ObjectShape::Box { half_extents } => SceneSdf::Box(BoxSdf { half_extents }),
            ObjectShape::Mesh => SceneSdf::Mesh(MeshSdf { mesh: self.mesh.clone() }),
        }
    }
}

/// The scene with its environment swapped; material and poses untouched.
pub fn relight(scene: &Scene, new_env: &SGEnvironment) -> Scene {
    Scene { environment: new_env.clone(), ..scene.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub view_dir: Vec3,
    pub uv: [f64; 2],
}

/// Per-lobe light after occlusion: `μ_j (1 − 𝓕_j) + L_i 𝓕_j`.
pub fn final_illumination(lobes: &[SphericalGaussian], indirect: &Rgb, fractions: &[f64]) -> Result<Vec<SphericalGaussian>> {
    if lobes.len() != fractions.len() {
        return Err(invalid("one occlusion fraction per lobe is required"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(invalid("occlusion fractions must lie in [0, 1]"));
    }
    Ok(lobes
        .iter()
        .zip(fractions)
        .map(|(l, &f)| SphericalGaussian { amplitude: l.amplitude * (1.0 - f) + indirect * f, ..*l })
        .collect())
}

/// Per-lobe amplitude that turns a constant radiance into the mixture:
/// `4π / Σ_j ∫G_j`, so `Σ_j κ G_j(ω) ≈ 1` for evenly spread lobes.
pub fn indirect_scale(lobes: &[SphericalGaussian]) -> f64 {
    let mass: f64 = lobes.iter().map(|l| sphere_mass(l.sharpness)).sum();
    if mass > 0.0 {
        4.0 * PI / mass
    } else {
        0.0
    }
}

/// Occlusion-independent lobe integrals at one surface point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTransfer {
    /// Cosine-weighted occluded share per lobe.
    pub fractions: Vec<f64>,
    /// `∫ G_j (cos)` over the upper hemisphere for a unit-amplitude lobe.
    pub diffuse: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShadeResult {
    pub rgb: Rgb,
    pub diffuse: Rgb,
    pub specular: Rgb,
    /// Irradiance-weighted mean occluded share.
    pub occlusion: f64,
    pub clamped: bool,
}

/// Everything a frame needs, expressed in the object frame.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub index: usize,
    pub pose: RigidPose,
    pub camera: Camera,
    pub lobes: Vec<SphericalGaussian>,
    pub spheres: Vec<Sphere>,
    pub kappa: f64,
    hand: Option<HandGeometry>,
}

#[derive(Debug, Clone)]
enum HandGeometry {
    Mesh(Bvh),
    Spheres(Vec<Sphere>),
}

impl PreparedFrame {
    /// Nearest hand hit distance along a world ray.
    pub fn hand_hit(&self, ray: &Ray) -> Option<f64> {
        match &self.hand {
            None => None,
            Some(HandGeometry::Mesh(bvh)) => bvh.intersect(ray, f64::INFINITY).map(|h| h.t),
            Some(HandGeometry::Spheres(s)) => {
                s.iter().filter_map(|s| intersect_sphere(ray, &s.center, s.radius)).fold(None, |a: Option<f64>, t| Some(a.map_or(t, |x| x.min(t))))
            }
        }
    }

    pub(crate) fn hand_normal(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        match &self.hand {
            None => None,
            Some(HandGeometry::Mesh(bvh)) => bvh.intersect(ray, f64::INFINITY).map(|h| {
                let n = if h.normal.dot(&ray.dir) < 0.0 { h.normal } else { -h.normal };
                (h.t, n)
            }),
            Some(HandGeometry::Spheres(s)) => {
                let mut best: Option<(f64, Vec3)> = None;
                for sp in s {
                    if let Some(t) = intersect_sphere(ray, &sp.center, sp.radius) {
                        if best.is_none_or(|(b, _)| t < b) {
                            best = Some((t, (ray.at(t) - sp.center).normalize()));
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub background: Rgb,
    /// Model hand occlusion of the environment (off for the blind ablation).
    pub hand_occlusion: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { background: Rgb::zeros(), hand_occlusion: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: Image<Rgb>,
    pub albedo: Image<Rgb>,
    pub occlusion: Image<f64>,
    pub specular: Image<Rgb>,
    /// Object silhouette.
    pub mask: Image<f64>,
    /// Object pixels not covered by the hand.
    pub hand_object_mask: Image<f64>,
    pub clamped_pixels: usize,
}

/// Result of casting one camera ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub sample: Option<SurfaceSample>,
    pub object_t: Option<f64>,
    pub hand_t: Option<f64>,
}

impl PixelHit {
    pub fn object_visible(&self) -> bool {
        match (self.object_t, self.hand_t) {
            (Some(o), Some(h)) => o <= h,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

pub struct Renderer {
    pub engine: OcclusionEngine,
    layouts: Vec<(u64, PatchLayout)>,
    bvh: Bvh,
}

#[derive(Debug, Clone, Copy)]
struct Lobe {
    axis: Vec3,
    eta: f64,
    amp: f64,
}

impl Lobe {
    fn product(&self, o: &Lobe) -> Lobe {
        let sum = self.axis * self.eta + o.axis * o.eta;
        let len = sum.norm();
        let amp = self.amp * o.amp * crate::math::exp(len - self.eta - o.eta);
        if len <= 1e-12 * (self.eta + o.eta) {
            return Lobe { axis: self.axis, eta: crate::sg::DEGENERATE_SHARPNESS, amp };
        }
        Lobe { axis: sum / len, eta: len, amp }
    }

    /// `∫_{Ω⁺} G(ω) (ω·n) dω` with the cosine lobe approximation.
    fn cosine_integral(&self, n: &Vec3) -> f64 {
        let c = Lobe { axis: *n, eta: COSINE_SHARPNESS, amp: COSINE_AMPLITUDE };
        let p = self.product(&c);
        p.amp * hemisphere_mass(p.eta, p.axis.dot(n)) + COSINE_OFFSET * self.amp * hemisphere_mass(self.eta, self.axis.dot(n))
    }
}

impl Renderer {
    pub fn new(scene: &Scene) -> Self {
        Self::with_engine(scene, OcclusionEngine::default())
    }

    pub fn with_engine(scene: &Scene, engine: OcclusionEngine) -> Self {
        let mut layouts: Vec<(u64, PatchLayout)> = Vec::new();
        for l in &scene.environment.lobes {
            let key = l.sharpness.to_bits();
            if !layouts.iter().any(|(k, _)| *k == key) {
                layouts.push((key, engine.layout(l.sharpness)));
            }
        }
        Self { engine, layouts, bvh: Bvh::new(scene.mesh.clone()) }
    }

    fn with_layout<T>(&self, eta: f64, f: impl FnOnce(&PatchLayout) -> T) -> T {
        let key = eta.to_bits();
        match self.layouts.iter().find(|(k, _)| *k == key) {
            Some((_, l)) => f(l),
            None => f(&self.engine.layout(eta)),
        }
    }

    pub fn prepare(&self, scene: &Scene, frame_index: usize) -> Result<PreparedFrame> {
        let frame = scene.frames.get(frame_index).ok_or_else(|| invalid("frame index out of range"))?;
        let pose = frame.object_pose;
        let rt = pose.rotation.transpose();
        let lobes: Vec<SphericalGaussian> = scene
            .environment
            .world_lobes()
            .into_iter()
            .map(|l| SphericalGaussian { axis: (rt * l.axis).normalize(), ..l })
            .collect();
        let kappa = indirect_scale(&lobes);
        let (spheres, hand) = match (&scene.hand, &frame.hand_pose) {
            (Some(rig), Some(hp)) => {
                let (verts, _normals, world) = rig.posed(hp)?;
                let local = world.iter().map(|s| Sphere::new(pose.inverse_apply(&s.center), s.radius)).collect();
                let geom = if rig.hand.faces.is_empty() {
                    HandGeometry::Spheres(world)
                } else {
                    let mesh = TriangleMesh {
                        positions: verts,
                        normals: {
                            let (_, n) = lbs_forward(&rig.hand, hp)?;
                            n
                        },
                        uvs: vec![[0.0, 0.0]; rig.hand.vertex_count()],
                        triangles: rig.hand.faces.iter().map(|f| f.map(|i| i as u32)).collect(),
                    };
                    HandGeometry::Mesh(Bvh::new(mesh))
                };
                (local, Some(geom))
            }
            _ => (Vec::new(), None),
        };
        Ok(PreparedFrame { index: frame_index, pose, camera: frame.camera, lobes, spheres, kappa, hand })
    }

    /// Cast the camera ray of pixel `(x, y)` (fractional coordinates).
    pub fn trace(&self, prep: &PreparedFrame, x: f64, y: f64) -> PixelHit {
        let world = prep.camera.ray(x, y);
        let hand_t = prep.hand_hit(&world);
        let local = world.transformed_inverse(&prep.pose);
        let hit = self.bvh.intersect(&local, f64::INFINITY);
        let sample = hit.map(|h| {
            let view = -local.dir;
            let mut n = h.normal;
            if n.dot(&view) <= 0.0 {
                n = if h.geometric_normal.dot(&view) > 0.0 { h.geometric_normal } else { -h.geometric_normal };
            }
            SurfaceSample { position: h.position, normal: n, view_dir: view, uv: h.uv }
        });
        PixelHit { sample, object_t: hit.map(|h| h.t), hand_t }
    }

    /// Occlusion fractions and diffuse transfers at a sample.
    pub fn transfer(&self, prep: &PreparedFrame, sample: &SurfaceSample, occlusion: bool, scratch: &mut Scratch) -> Result<PointTransfer> {
        let n = sample.normal;
        let diffuse: Vec<f64> =
            prep.lobes.iter().map(|l| Lobe { axis: l.axis, eta: l.sharpness, amp: 1.0 }.cosine_integral(&n)).collect();
        let mut fractions = vec![0.0; prep.lobes.len()];
        let mut degenerate = false;
        if occlusion && !prep.spheres.is_empty() {
            let (caps, deg) = caps_for_point(&sample.position, &n, &prep.spheres)?;
            degenerate = deg;
            if !caps.is_empty() {
                for (f, l) in fractions.iter_mut().zip(&prep.lobes) {
                    *f = self.lobe_fraction(l, &caps, &n, scratch);
                }
            }
        }
        Ok(PointTransfer { fractions, diffuse, degenerate })
    }

    fn lobe_fraction(&self, l: &SphericalGaussian, caps: &[SphericalCap], n: &Vec3, scratch: &mut Scratch) -> f64 {
        self.with_layout(l.sharpness, |layout| layout.occlusion(&l.axis, caps, n, scratch, true).cos_fraction)
    }

    /// Radiance leaving `sample` towards the viewer.
    pub fn shade(
        &self,
        prep: &PreparedFrame,
        sample: &SurfaceSample,
        params: &SurfaceParams,
        indirect: &Rgb,
        transfer: &PointTransfer,
    ) -> ShadeResult {
        shade_lobes(&prep.lobes, prep.kappa, sample, params, indirect, transfer)
    }

    /// Full shading of one sample for a scene frame.
    pub fn shade_point(&self, scene: &Scene, frame_index: usize, sample: &SurfaceSample) -> Result<ShadeResult> {
        let prep = self.prepare(scene, frame_index)?;
        let mut scratch = Scratch::new(self.engine.resolution);
        let t = self.transfer(&prep, sample, true, &mut scratch)?;
        let params = scene.material.params(sample.uv);
        Ok(self.shade(&prep, sample, &params, &scene.material.indirect, &t))
    }

    pub fn render_frame(&self, scene: &Scene, frame_index: usize, opts: &RenderOptions) -> Result<RenderOutput> {
        let prep = self.prepare(scene, frame_index)?;
        let cam = prep.camera;
        let (w, h) = (cam.width, cam.height);
        let res = self.engine.resolution;
        let rows: Vec<Result<Vec<PixelOut>>> = map_init(
            h,
            || Scratch::new(res),
            |scratch, y| (0..w).map(|x| self.render_pixel(scene, &prep, x, y, opts, scratch)).collect(),
        );
        let mut out = RenderOutput {
            rgb: Image::filled(w, h, opts.background),
            albedo: Image::filled(w, h, Rgb::zeros()),
            occlusion: Image::filled(w, h, 0.0),
            specular: Image::filled(w, h, Rgb::zeros()),
            mask: Image::filled(w, h, 0.0),
            hand_object_mask: Image::filled(w, h, 0.0),
            clamped_pixels: 0,
        };
        for (y, row) in rows.into_iter().enumerate() {
            for (x, p) in row?.into_iter().enumerate() {
                out.rgb.set(x, y, p.rgb);
                out.albedo.set(x, y, p.albedo);
                out.occlusion.set(x, y, p.occlusion);
                out.specular.set(x, y, p.specular);
                out.mask.set(x, y, p.mask);
                out.hand_object_mask.set(x, y, p.visible);
                out.clamped_pixels += p.clamped as usize;
            }
        }
        if out.rgb.has_non_finite() || out.occlusion.has_non_finite() {
            return Err(Error::Numerical(alloc::format!("non-finite radiance in frame {frame_index}")));
        }
        Ok(out)
    }

    fn render_pixel(&self, scene: &Scene, prep: &PreparedFrame, x: usize, y: usize, opts: &RenderOptions, scratch: &mut Scratch) -> Result<PixelOut> {
        let hit = self.trace(prep, x as f64 + 0.5, y as f64 + 0.5);
        let mut out = PixelOut { rgb: opts.background, ..PixelOut::default() };
        if hit.sample.is_some() {
            out.mask = 1.0;
        }
        if let (Some(s), true) = (hit.sample, hit.object_visible()) {
            out.visible = 1.0;
            let params = scene.material.params(s.uv);
            let t = self.transfer(prep, &s, opts.hand_occlusion, scratch)?;
            let r = self.shade(prep, &s, &params, &scene.material.indirect, &t);
            out.rgb = r.rgb;
            out.specular = r.specular;
            out.occlusion = r.occlusion;
            out.albedo = params.albedo;
            out.clamped = r.clamped;
        } else if hit.hand_t.is_some() {
            out.rgb = self.shade_hand(prep, x, y);
        }
        Ok(out)
    }

    fn shade_hand(&self, prep: &PreparedFrame, x: usize, y: usize) -> Rgb {
        let ray = prep.camera.pixel_ray(x, y);
        let Some((_, n_world)) = prep.hand_normal(&ray) else { return Rgb::zeros() };
        let n = prep.pose.rotation.transpose() * n_world;
        let albedo = rgb(HAND_ALBEDO[0], HAND_ALBEDO[1], HAND_ALBEDO[2]);
        let e: Rgb = prep
            .lobes
            .iter()
            .map(|l| l.amplitude * Lobe { axis: l.axis, eta: l.sharpness, amp: 1.0 }.cosine_integral(&n))
            .sum();
        (albedo.component_mul(&e) / PI).sup(&Rgb::zeros())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PixelOut {
    rgb: Rgb,
    albedo: Rgb,
    specular: Rgb,
    occlusion: f64,
    mask: f64,
    visible: f64,
    clamped: bool,
}

/// Specular lobe integrals `∫ G_j D_warp (cos)` for unit-amplitude lobes,
/// the `F·G/(4cc)` factor they share, and whether a cosine was clamped.
pub fn specular_integrals(lobes: &[SphericalGaussian], sample: &SurfaceSample, params: &SurfaceParams) -> (Vec<f64>, Rgb, bool) {
    let s = specular_lobe(params, &sample.normal, &sample.view_dir);
    if params.specular == Rgb::zeros() {
        return (vec![0.0; lobes.len()], Rgb::zeros(), s.clamped);
    }
    let w = Lobe { axis: s.lobe.axis, eta: s.lobe.sharpness, amp: s.lobe.amplitude.x };
    let q = lobes
        .iter()
        .map(|l| Lobe { axis: l.axis, eta: l.sharpness, amp: 1.0 }.product(&w).cosine_integral(&sample.normal))
        .collect();
    (q, s.factor, s.clamped)
}

/// `Σ_j (μ_j(1−F_j) + κ F_j L_i) w_j`.
pub fn light_sum(lobes: &[SphericalGaussian], kappa: f64, indirect: &Rgb, fractions: &[f64], weights: &[f64]) -> Rgb {
    let mut acc = Rgb::zeros();
    for ((l, &f), &w) in lobes.iter().zip(fractions).zip(weights) {
        acc += (l.amplitude * (1.0 - f) + indirect * (kappa * f)) * w;
    }
    acc
}

/// Shade from explicit lobes, transfers and surface parameters.
pub fn shade_lobes(
    lobes: &[SphericalGaussian],
    kappa: f64,
    sample: &SurfaceSample,
    params: &SurfaceParams,
    indirect: &Rgb,
    transfer: &PointTransfer,
) -> ShadeResult {
    let (q, factor, clamped) = specular_integrals(lobes, sample, params);
    let t: Vec<f64> = transfer.diffuse.iter().map(|d| d / PI).collect();
    let diffuse = params.albedo.component_mul(&light_sum(lobes, kappa, indirect, &transfer.fractions, &t));
    let specular = factor.component_mul(&light_sum(lobes, kappa, indirect, &transfer.fractions, &q));
    let mut occ_num = 0.0;
    let mut occ_den = 0.0;
    for (j, l) in lobes.iter().enumerate() {
        let w = luminance(&l.amplitude) * transfer.diffuse[j].max(0.0);
        occ_num += w * transfer.fractions[j];
        occ_den += w;
    }
    let rgb = (diffuse + specular).sup(&Rgb::zeros());
    let occlusion = if occ_den > 0.0 { (occ_num / occ_den).clamp(0.0, 1.0) } else { 0.0 };
    ShadeResult { rgb, diffuse, specular, occlusion, clamped }
}

/// Unoccluded reference shade: every lobe integrated against the BRDF and
/// cosine lobes with no hand term.
pub fn shade_unoccluded(lobes: &[SphericalGaussian], sample: &SurfaceSample, params: &SurfaceParams) -> Rgb {
    let n = sample.normal;
    let mut out = Rgb::zeros();
    let s = specular_lobe(params, &n, &sample.view_dir);
    for l in lobes {
        let unit = Lobe { axis: l.axis, eta: l.sharpness, amp: 1.0 };
        out += l.amplitude.component_mul(&params.albedo) * (unit.cosine_integral(&n) / PI);
        if params.specular != Rgb::zeros() {
            let w = Lobe { axis: s.lobe.axis, eta: s.lobe.sharpness, amp: s.lobe.amplitude.x };
            out += l.amplitude.component_mul(&s.factor) * unit.product(&w).cosine_integral(&n);
        }
    }
    out.sup(&Rgb::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::splat;

    #[test]
    fn final_illumination_blends() {
        let l = SphericalGaussian::from_parts(Vec3::z(), 3.0, splat(1.0));
        let li = rgb(0.8784, 0.6745, 0.4118);
        let out = final_illumination(&[l], &li, &[0.5]).unwrap();
        assert!((out[0].amplitude - rgb(0.9392, 0.83725, 0.7059)).norm() < 1e-12);
        assert_eq!(final_illumination(&[l], &li, &[0.0]).unwrap()[0].amplitude, splat(1.0));
        assert_eq!(final_illumination(&[l], &li, &[1.0]).unwrap()[0].amplitude, li);
        assert!(final_illumination(&[l], &li, &[1.5]).is_err());
        assert!(final_illumination(&[l], &li, &[]).is_err());
    }

    #[test]
    fn kappa_makes_a_partition_of_unity() {
        let lobes: Vec<SphericalGaussian> = crate::math::fibonacci_sphere(128)
            .into_iter()
            .map(|a| SphericalGaussian::from_parts(a, 12.0, splat(1.0)))
            .collect();
        let k = indirect_scale(&lobes);
        for d in crate::math::fibonacci_sphere(50) {
            let s: f64 = lobes.iter().map(|l| l.shape(&d)).sum::<f64>() * k;
            assert!((s - 1.0).abs() < 0.04, "{s}");
        }
    }

    fn sample() -> SurfaceSample {
        SurfaceSample { position: Vec3::zeros(), normal: Vec3::z(), view_dir: Vec3::new(0.3, 0.0, 1.0).normalize(), uv: [0.5, 0.5] }
    }

    fn lobes() -> Vec<SphericalGaussian> {
        crate::math::fibonacci_sphere(32)
            .into_iter()
            .enumerate()
            .map(|(k, a)| SphericalGaussian::from_parts(a, 6.0, rgb(0.2 + 0.01 * k as f64, 0.3, 0.1)))
            .collect()
    }

    #[test]
    fn zero_occlusion_equals_unoccluded_path() {
        let ls = lobes();
        let s = sample();
        let p = SurfaceParams { albedo: rgb(0.3, 0.5, 0.7), roughness: 0.4, specular: splat(0.04) };
        let t = PointTransfer {
            fractions: vec![0.0; ls.len()],
            diffuse: ls.iter().map(|l| Lobe { axis: l.axis, eta: l.sharpness, amp: 1.0 }.cosine_integral(&s.normal)).collect(),
            degenerate: false,
        };
        let a = shade_lobes(&ls, 1.0, &s, &p, &splat(0.9), &t).rgb;
        let b = shade_unoccluded(&ls, &s, &p);
        assert!((a - b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn black_environment_is_black() {
        let ls: Vec<SphericalGaussian> = lobes().into_iter().map(|l| SphericalGaussian { amplitude: Rgb::zeros(), ..l }).collect();
        let p = SurfaceParams { albedo: splat(0.5), roughness: 0.5, specular: splat(0.04) };
        assert_eq!(shade_unoccluded(&ls, &sample(), &p), Rgb::zeros());
    }

    #[test]
    fn cosine_integral_matches_quadrature() {
        // Oracle: midpoint quadrature of G(ω) max(ω·n, 0).
        let n = Vec3::z();
        for (eta, beta) in [(3.0, 0.3), (12.0, 1.2), (40.0, 0.0), (12.0, 1.9)] {
            let axis = Vec3::new(crate::math::sin(beta), 0.0, crate::math::cos(beta));
            let m = 300;
            let mut acc = 0.0;
            for i in 0..m {
                let ct = (i as f64 + 0.5) / m as f64;
                let st = crate::math::sqrt(1.0 - ct * ct);
                for j in 0..2 * m {
                    let ph = (j as f64 + 0.5) / (2 * m) as f64 * 2.0 * PI;
                    let w = Vec3::new(st * crate::math::cos(ph), st * crate::math::sin(ph), ct);
                    acc += crate::math::exp(eta * (w.dot(&axis) - 1.0)) * ct;
                }
            }
            let q = acc / m as f64 * (2.0 * PI / (2 * m) as f64);
            let a = Lobe { axis, eta, amp: 1.0 }.cosine_integral(&n);
            let scale = sphere_mass(eta);
            assert!((a - q).abs() / scale < 0.03, "eta {eta} beta {beta}: {a} vs {q}");
        }
    }
}
