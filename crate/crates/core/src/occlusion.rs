//! Occlusion of an SG lobe by spheres, via a patch grid over the ISG
//! parameter domain.
//!
//! Each lobe gets a `res × res` grid over `(θ, φ) ∈ [0, π]²`. Patch masses
//! are corner combinations of the normalized ISG `Ŝ`, so they telescope to
//! one. Grid points map to directions through a lobe-matched warp: the
//! offsets `(g(θ − π/2), h(φ − π/2))` are distributed as a product of two
//! unit logistics under `Ŝ`, and their radius is sent to the polar angle with
//! the same cumulative mass under the SG. A patch therefore covers the
//! directions whose SG mass it is charged with.
//!
//! Membership is sampled at `4 × 4` points per patch and kept as a 16-bit
//! mask; only patches that straddle a cap boundary or the horizon are
//! sampled, the rest are classified from a bounding angular radius.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, Result};
use crate::hand::Sphere;
use crate::isg::{isg_hat, IsgCoefficients};
use crate::math::{asin, atan2, cos, exp, expm1, log1p, orthonormal_basis, sin, sqrt, Rgb, Vec3, FRAC_PI_2, PI};
use crate::quadrature;
use crate::sg::SphericalGaussian;

pub const DEFAULT_RESOLUTION: usize = 64;
/// Sub-samples per patch edge; `SUBSAMPLES²` must fit a `u16`.
pub const SUBSAMPLES: usize = 4;
pub const FULL_MASK: u16 = u16::MAX;
/// Patches lighter than this are never marked.
pub const MASS_FLOOR: f64 = 1e-9;
/// Inflation of the sampled patch radius.
const RADIUS_SAFETY: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCap {
    pub axis: Vec3,
    pub half_angle: f64,
    pub cos_half: f64,
    pub sin_half: f64,
    /// The query point lies inside the sphere; the cap covers every direction.
    pub degenerate: bool,
}

impl SphericalCap {
    pub fn new(axis: Vec3, half_angle: f64) -> Self {
        let half_angle = half_angle.clamp(0.0, PI);
        Self { axis: axis.normalize(), half_angle, cos_half: cos(half_angle), sin_half: sin(half_angle), degenerate: false }
    }

    #[inline]
    pub fn contains(&self, dir: &Vec3) -> bool {
        dir.dot(&self.axis) >= self.cos_half
    }

    /// Whether the cap reaches the open upper hemisphere of `n`.
    fn reaches_above(&self, n: &Vec3) -> bool {
        self.half_angle >= FRAC_PI_2 || self.axis.dot(n) > -self.sin_half
    }

    fn local(&self, t: &Vec3, b: &Vec3, z: &Vec3) -> Self {
        Self { axis: Vec3::new(self.axis.dot(t), self.axis.dot(b), self.axis.dot(z)), ..*self }
    }
}

/// Cap subtended by `sphere` seen from `x`. A point inside the sphere sees
/// every direction blocked; that case returns a full cap flagged degenerate.
pub fn project_sphere_to_cap(x: &Vec3, sphere: &Sphere) -> Result<SphericalCap> {
    let d = sphere.center - x;
    let dist = d.norm();
    if !(dist > 0.0) {
        return Err(domain("query point coincides with a sphere center"));
    }
    if dist <= sphere.radius {
        let mut cap = SphericalCap::new(d / dist, PI);
        cap.degenerate = true;
        return Ok(cap);
    }
    Ok(SphericalCap::new(d / dist, asin((sphere.radius / dist).min(1.0))))
}

/// Radial CDF of the product of two unit logistics,
/// `F(ρ) = P(a² + b² ≤ ρ²)`, tabulated once.
#[derive(Debug, Clone)]
pub struct RadialCdf {
    step: f64,
    table: Vec<f64>,
}

impl RadialCdf {
    const MAX_RADIUS: f64 = 40.0;
    const SIZE: usize = 1025;

    pub fn new() -> Self {
        let step = Self::MAX_RADIUS / (Self::SIZE - 1) as f64;
        let density = |x: f64| {
            let e = exp(-x.abs());
            e / ((1.0 + e) * (1.0 + e))
        };
        let mut table: Vec<f64> = (0..Self::SIZE)
            .map(|k| {
                let rho = k as f64 * step;
                if rho == 0.0 {
                    return 0.0;
                }
                // a = ρ sin t removes the square-root endpoint behaviour.
                let half = quadrature::integrate(0.0, FRAC_PI_2, 32, |t| {
                    let c = rho * cos(t);
                    density(rho * sin(t)) * (2.0 * crate::math::sigmoid(c) - 1.0) * c
                });
                (2.0 * half).min(1.0)
            })
            .collect();
        // Quadrature noise in the far tail must not break monotonicity.
        for k in 1..Self::SIZE {
            table[k] = table[k].max(table[k - 1]);
        }
        Self { step, table }
    }

    pub fn cdf(&self, rho: f64) -> f64 {
        let u = rho / self.step;
        if u >= (Self::SIZE - 1) as f64 {
            return 1.0;
        }
        let k = u as usize;
        let f = u - k as f64;
        self.table[k] * (1.0 - f) + self.table[k + 1] * f
    }

    pub fn inverse(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        let k = self.table.partition_point(|&v| v < p);
        if k >= Self::SIZE {
            return Self::MAX_RADIUS;
        }
        if k == 0 {
            return 0.0;
        }
        let (lo, hi) = (self.table[k - 1], self.table[k]);
        let f = if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
        (k as f64 - 1.0 + f) * self.step
    }
}

impl Default for RadialCdf {
    fn default() -> Self {
        Self::new()
    }
}

/// Shared configuration: ISG coefficients, grid resolution and the radial
/// table. Cheap to clone.
#[derive(Debug, Clone)]
pub struct OcclusionEngine {
    pub coeffs: IsgCoefficients,
    pub resolution: usize,
    radial: Arc<RadialCdf>,
}

impl Default for OcclusionEngine {
    fn default() -> Self {
        Self::new(DEFAULT_RESOLUTION, IsgCoefficients::default())
    }
}

impl OcclusionEngine {
    pub fn new(resolution: usize, coeffs: IsgCoefficients) -> Self {
        assert!(resolution >= 2, "grid resolution must be at least 2");
        Self { coeffs, resolution, radial: Arc::new(RadialCdf::new()) }
    }

    /// Patch geometry and masses for lobes of sharpness `eta`.
    pub fn layout(&self, eta: f64) -> PatchLayout {
        PatchLayout::new(self, eta)
    }

    /// Mark the occluded patches of `grid` (spec-level entry point).
    pub fn collect_occluded_patches(&self, grid: &PatchGrid, caps: &[SphericalCap], n: &Vec3) -> PatchGrid {
        let layout = self.layout(grid.eta);
        let mut scratch = Scratch::new(self.resolution);
        let hits = layout.collect(&grid.lobe_axis, caps, n, &mut scratch);
        let mut occupancy = grid.occupancy.clone();
        for (idx, mask) in hits {
            occupancy[idx as usize] |= mask;
        }
        PatchGrid { occupancy, ..grid.clone() }
    }

    /// `𝓕 · ∫G` and its complement for one lobe at a surface point.
    pub fn occluded_sg_integral(&self, sg: &SphericalGaussian, query: &OcclusionQuery) -> Result<OccludedIntegral> {
        query.validate()?;
        let mut caps = Vec::with_capacity(query.spheres.len());
        let mut degenerate = false;
        for s in &query.spheres {
            let cap = project_sphere_to_cap(&query.point, s)?;
            degenerate |= cap.degenerate;
            caps.push(cap);
        }
        if degenerate {
            log::warn!("occlusion query point lies inside an occluder sphere");
        }
        let layout = self.layout(sg.sharpness);
        let mut scratch = Scratch::new(self.resolution);
        let occ = layout.occlusion(&sg.axis, &caps, &query.normal, &mut scratch, false);
        let full = sg.integral_sphere();
        let occluded = full * occ.fraction;
        let unoccluded = full * (1.0 - occ.fraction);
        Ok(OccludedIntegral { occluded, unoccluded, fraction: occ.fraction, degenerate })
    }
}

/// Occupancy of one lobe's patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub resolution: usize,
    pub eta: f64,
    pub lobe_axis: Vec3,
    /// Tangent basis `(t, b)` completing the lobe axis to a right-handed frame.
    pub frame: (Vec3, Vec3),
    /// Sub-sample mask per patch, row-major in `(θ, φ)`.
    pub occupancy: Vec<u16>,
}

impl PatchGrid {
    pub fn new(resolution: usize, eta: f64, lobe_axis: &Vec3) -> Self {
        let axis = lobe_axis.normalize();
        Self {
            resolution,
            eta,
            lobe_axis: axis,
            frame: orthonormal_basis(&axis),
            occupancy: vec![0; resolution * resolution],
        }
    }

    pub fn filled(resolution: usize, eta: f64, lobe_axis: &Vec3) -> Self {
        let mut g = Self::new(resolution, eta, lobe_axis);
        g.occupancy.fill(FULL_MASK);
        g
    }

    /// Occupied sub-samples; at most `res² · 16`.
    pub fn occupied_samples(&self) -> u32 {
        self.occupancy.iter().map(|m| m.count_ones()).sum()
    }

    pub fn occupied_patches(&self) -> usize {
        self.occupancy.iter().filter(|&&m| m != 0).count()
    }
}

/// Σ over occupied patches of the `Ŝ` corner combination, each weighted by
/// its occupied sub-sample share; clamped to `[0, 1]`.
pub fn occlusion_fraction(grid: &PatchGrid, eta: f64, coeffs: &IsgCoefficients) -> f64 {
    let (g, h) = (coeffs.theta_slope(eta), coeffs.phi_slope(eta));
    let res = grid.resolution;
    let delta = PI / res as f64;
    let mut total = 0.0;
    for (idx, &mask) in grid.occupancy.iter().enumerate() {
        if mask == 0 {
            continue;
        }
        let (i, j) = (idx / res, idx % res);
        let (t0, t1) = (i as f64 * delta, (i + 1) as f64 * delta);
        let (p0, p1) = (j as f64 * delta, (j + 1) as f64 * delta);
        let m = isg_hat(t1, p1, g, h) - isg_hat(t1, p0, g, h) - isg_hat(t0, p1, g, h) + isg_hat(t0, p0, g, h);
        total += m * mask.count_ones() as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
    }
    total.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionQuery {
    pub point: Vec3,
    pub normal: Vec3,
    pub spheres: Vec<Sphere>,
}

impl OcclusionQuery {
    fn validate(&self) -> Result<()> {
        if !crate::math::is_unit(&self.normal, 1e-6) {
            return Err(domain("query normal must be unit length"));
        }
        if self.spheres.iter().any(|s| (s.center - self.point).norm() == 0.0) {
            return Err(domain("sphere center coincides with the query point"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccludedIntegral {
    pub occluded: Rgb,
    pub unoccluded: Rgb,
    pub fraction: f64,
    pub degenerate: bool,
}

/// Per-lobe occlusion result.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LobeOcclusion {
    /// Occluded share of the lobe mass.
    pub fraction: f64,
    /// Occluded share of the cosine-weighted lobe mass over the upper
    /// hemisphere (only when requested; otherwise 0).
    pub cos_fraction: f64,
}

/// Reusable per-thread buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    state: Vec<u8>,
    touched: Vec<u32>,
    partial: Vec<(u32, u32)>,
    near: Vec<SphericalCap>,
}

impl Scratch {
    pub fn new(resolution: usize) -> Self {
        Self { state: vec![0; resolution * resolution], touched: Vec::new(), partial: Vec::new(), near: Vec::new() }
    }
}

const UNTOUCHED: u8 = 0;
const PARTIAL: u8 = 1;
const INSIDE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Horizon {
    Above,
    Straddle,
    Below,
}

/// Grid geometry and patch masses for one sharpness value.
#[derive(Debug, Clone)]
pub struct PatchLayout {
    pub eta: f64,
    pub resolution: usize,
    g: f64,
    h: f64,
    delta: f64,
    lobe_norm: f64,
    radial: Arc<RadialCdf>,
    mass: Vec<f64>,
    center: Vec<Vec3>,
    radius: Vec<f64>,
    cos_r: Vec<f64>,
    sin_r: Vec<f64>,
    active: Vec<u32>,
    /// Sub-sample directions of active patches, 16 per patch.
    sub_dirs: Vec<Vec3>,
    /// Farthest reach of any active patch from the lobe axis.
    tail_radius: f64,
}

impl PatchLayout {
    fn new(engine: &OcclusionEngine, eta: f64) -> Self {
        let res = engine.resolution;
        let delta = PI / res as f64;
        let (g, h) = (engine.coeffs.theta_slope(eta), engine.coeffs.phi_slope(eta));
        let mut layout = Self {
            eta,
            resolution: res,
            g,
            h,
            delta,
            lobe_norm: -expm1(-2.0 * eta),
            radial: engine.radial.clone(),
            mass: vec![0.0; res * res],
            center: vec![Vec3::zeros(); res * res],
            radius: vec![0.0; res * res],
            cos_r: vec![1.0; res * res],
            sin_r: vec![0.0; res * res],
            active: Vec::new(),
            sub_dirs: vec![Vec3::zeros(); res * res * SUBSAMPLES * SUBSAMPLES],
            tail_radius: 0.0,
        };
        let edge: Vec<f64> = (0..=res).map(|k| k as f64 * delta).collect();
        let st: Vec<f64> = edge.iter().map(|&t| crate::math::sigmoid(g * (t - FRAC_PI_2))).collect();
        let sp: Vec<f64> = edge.iter().map(|&p| crate::math::sigmoid(h * (p - FRAC_PI_2))).collect();
        for i in 0..res {
            for j in 0..res {
                let idx = i * res + j;
                let corner = |a: usize, b: usize| (st[a] * sp[b]).clamp(0.0, 1.0);
                let m = corner(i + 1, j + 1) - corner(i + 1, j) - corner(i, j + 1) + corner(i, j);
                layout.mass[idx] = m;
                if m < MASS_FLOOR {
                    continue;
                }
                layout.active.push(idx as u32);
                let c = layout.direction((i as f64 + 0.5) * delta, (j as f64 + 0.5) * delta);
                let mut r: f64 = 0.0;
                for k in 0..16 {
                    let s = (k % 4) as f64 / 4.0;
                    let (u, v) = match k / 4 {
                        0 => (s, 0.0),
                        1 => (1.0, s),
                        2 => (1.0 - s, 1.0),
                        _ => (0.0, 1.0 - s),
                    };
                    let d = layout.direction((i as f64 + u) * delta, (j as f64 + v) * delta);
                    r = r.max(crate::math::angle_between(&c, &d));
                }
                let r = (r * RADIUS_SAFETY + 1e-9).min(PI);
                layout.tail_radius = layout.tail_radius.max((crate::math::acos(c.z.clamp(-1.0, 1.0)) + r).min(PI));
                layout.center[idx] = c;
                layout.radius[idx] = r;
                layout.cos_r[idx] = cos(r);
                layout.sin_r[idx] = sin(r);
                for k in 0..SUBSAMPLES * SUBSAMPLES {
                    let u = ((k / SUBSAMPLES) as f64 + 0.5) / SUBSAMPLES as f64;
                    let v = ((k % SUBSAMPLES) as f64 + 0.5) / SUBSAMPLES as f64;
                    layout.sub_dirs[idx * SUBSAMPLES * SUBSAMPLES + k] =
                        layout.direction((i as f64 + u) * delta, (j as f64 + v) * delta);
                }
            }
        }
        layout
    }

    /// Lobe-frame direction of grid point `(θ, φ)`.
    pub fn direction(&self, theta: f64, phi: f64) -> Vec3 {
        let a = self.g * (theta - FRAC_PI_2);
        let b = self.h * (phi - FRAC_PI_2);
        let rho = sqrt(a * a + b * b);
        if rho == 0.0 {
            return Vec3::z();
        }
        let f = self.radial.cdf(rho);
        let one_minus_cos = (-log1p(-f * self.lobe_norm) / self.eta).min(2.0);
        let sin_psi = sqrt((one_minus_cos * (2.0 - one_minus_cos)).max(0.0));
        Vec3::new(sin_psi * a / rho, sin_psi * b / rho, 1.0 - one_minus_cos)
    }

    /// Fractional grid coordinates `(θ/Δ, φ/Δ)` of a lobe-frame direction.
    pub fn grid_coords(&self, dir: &Vec3) -> (f64, f64) {
        let one_minus_cos = (1.0 - dir.z).clamp(0.0, 2.0);
        let f = (-expm1(-self.eta * one_minus_cos) / self.lobe_norm).min(1.0);
        let rho = self.radial.inverse(f);
        let gamma = atan2(dir.y, dir.x);
        let theta = FRAC_PI_2 + rho * cos(gamma) / self.g;
        let phi = FRAC_PI_2 + rho * sin(gamma) / self.h;
        (theta / self.delta, phi / self.delta)
    }

    pub fn patch_mass(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.resolution + j]
    }

    pub fn total_active_mass(&self) -> f64 {
        self.active.iter().map(|&k| self.mass[k as usize]).sum()
    }

    #[inline]
    fn sub_direction(&self, idx: usize, k: usize) -> Vec3 {
        self.sub_dirs[idx * SUBSAMPLES * SUBSAMPLES + k]
    }

    fn horizon(&self, idx: usize, n: &Vec3) -> Horizon {
        let c = self.center[idx].dot(n);
        if c >= self.sin_r[idx] && self.radius[idx] < FRAC_PI_2 {
            Horizon::Above
        } else if c <= -self.sin_r[idx] && self.radius[idx] < FRAC_PI_2 {
            Horizon::Below
        } else {
            Horizon::Straddle
        }
    }

    fn classify(&self, idx: usize, cap: &SphericalCap) -> u8 {
        let pc = self.center[idx].dot(&cap.axis);
        let r = self.radius[idx];
        let (cr, sr) = (self.cos_r[idx], self.sin_r[idx]);
        if cap.half_angle >= r && pc >= cap.cos_half * cr + cap.sin_half * sr {
            INSIDE
        } else if cap.half_angle + r < PI && pc <= cap.cos_half * cr - cap.sin_half * sr {
            UNTOUCHED
        } else {
            PARTIAL
        }
    }

    /// Warp radius `ρ` of directions at polar angle `psi` from the lobe axis.
    fn warp_radius(&self, psi: f64) -> f64 {
        let f = (-expm1(-self.eta * (1.0 - cos(psi))) / self.lobe_norm).min(1.0);
        self.radial.inverse(f)
    }

    /// Inclusive patch-index box that contains every patch a cap can touch.
    ///
    /// In warp coordinates a cap is an annular sector: its polar range maps
    /// to a radius range and its azimuth range is unchanged.
    fn cap_box(&self, cap: &SphericalCap) -> (usize, usize, usize, usize) {
        let res = self.resolution;
        let full = (0, res - 1, 0, res - 1);
        // A cap over the antipode maps onto the outer rim of the grid.
        if cap.half_angle >= FRAC_PI_2 || -cap.axis.z >= cap.cos_half - 1e-12 {
            return full;
        }
        let c = &cap.axis;
        let sin_c = sqrt(c.x * c.x + c.y * c.y);
        let psi_c = atan2(sin_c, c.z);
        let alpha = cap.half_angle;
        let r_hi = self.warp_radius((psi_c + alpha).min(PI));
        let (mut x0, mut x1, mut y0, mut y1);
        if psi_c <= alpha || sin_c <= cap.sin_half {
            (x0, x1, y0, y1) = (-r_hi, r_hi, -r_hi, r_hi);
        } else {
            let r_lo = self.warp_radius(psi_c - alpha);
            let gamma = atan2(c.y, c.x);
            let spread = asin((cap.sin_half / sin_c).min(1.0));
            (x0, x1, y0, y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for g in [gamma - spread, gamma + spread] {
                for r in [r_lo, r_hi] {
                    let (x, y) = (r * cos(g), r * sin(g));
                    (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
                }
            }
            // Extreme azimuths inside the range reach the outer radius.
            for q in 0..4 {
                let g = q as f64 * FRAC_PI_2;
                let mut d = (g - gamma) % (2.0 * PI);
                if d > PI {
                    d -= 2.0 * PI;
                } else if d < -PI {
                    d += 2.0 * PI;
                }
                if d.abs() <= spread {
                    let (x, y) = (r_hi * cos(g), r_hi * sin(g));
                    (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
                }
            }
        }
        let to_i = |a: f64| (FRAC_PI_2 + a / self.g) / self.delta;
        let to_j = |b: f64| (FRAC_PI_2 + b / self.h) / self.delta;
        let clampi = |x: f64| x.clamp(0.0, (res - 1) as f64) as usize;
        (clampi(to_i(x0) - 1.0), clampi(to_i(x1) + 1.0), clampi(to_j(y0) - 1.0), clampi(to_j(y1) + 1.0))
    }

    /// Occupancy of the lobe along world `axis` for world-space caps and
    /// normal. Returns `(patch index, sub-mask)` pairs in index order.
    pub fn collect(&self, axis: &Vec3, caps: &[SphericalCap], n: &Vec3, scratch: &mut Scratch) -> Vec<(u32, u16)> {
        let frame = LobeFrame::new(axis);
        let n_local = frame.to_local(n);
        let local = self.relevant_caps(&frame, caps, &n_local);
        let mut out = Vec::new();
        self.mark(&local, &n_local, scratch, |idx, mask, _| out.push((idx as u32, mask)));
        out
    }

    /// Occlusion fractions of one lobe.
    pub fn occlusion(&self, axis: &Vec3, caps: &[SphericalCap], n: &Vec3, scratch: &mut Scratch, with_cos: bool) -> LobeOcclusion {
        let frame = LobeFrame::new(axis);
        let n_local = frame.to_local(n);
        let local = self.relevant_caps(&frame, caps, &n_local);
        self.occlusion_local(&local, &n_local, scratch, with_cos)
    }

    pub(crate) fn occlusion_local(
        &self,
        local: &[SphericalCap],
        n_local: &Vec3,
        scratch: &mut Scratch,
        with_cos: bool,
    ) -> LobeOcclusion {
        if local.is_empty() {
            return LobeOcclusion::default();
        }
        let mut fraction = 0.0;
        let mut cos_num = 0.0;
        let per = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
        self.mark(local, n_local, scratch, |idx, mask, hz| {
            let m = self.mass[idx];
            fraction += m * mask.count_ones() as f64 * per;
            if with_cos {
                cos_num += m * self.cos_weight(idx, n_local, hz, mask);
            }
        });
        let cos_fraction = if with_cos && cos_num > 0.0 {
            let den: f64 = self
                .active
                .iter()
                .map(|&k| {
                    let k = k as usize;
                    self.mass[k] * self.cos_weight(k, n_local, self.horizon(k, n_local), FULL_MASK)
                })
                .sum();
            if den > 0.0 {
                (cos_num / den).clamp(0.0, 1.0)
            } else {
                0.0
            }
        } else {
            0.0
        };
        LobeOcclusion { fraction: fraction.clamp(0.0, 1.0), cos_fraction }
    }

    /// Mean clamped cosine over the sub-samples selected by `mask`, in
    /// units of one full patch.
    fn cos_weight(&self, idx: usize, n: &Vec3, hz: Horizon, mask: u16) -> f64 {
        match hz {
            Horizon::Below => 0.0,
            Horizon::Above => self.center[idx].dot(n) * mask.count_ones() as f64 / (SUBSAMPLES * SUBSAMPLES) as f64,
            Horizon::Straddle => {
                let mut acc = 0.0;
                for k in 0..SUBSAMPLES * SUBSAMPLES {
                    if mask & (1 << k) != 0 {
                        acc += self.sub_direction(idx, k).dot(n).max(0.0);
                    }
                }
                acc / (SUBSAMPLES * SUBSAMPLES) as f64
            }
        }
    }

    fn relevant_caps(&self, frame: &LobeFrame, caps: &[SphericalCap], n_local: &Vec3) -> Vec<SphericalCap> {
        let reach = self.tail_radius;
        caps.iter()
            .map(|c| c.local(&frame.t, &frame.b, &frame.z))
            .filter(|c| {
                c.reaches_above(n_local)
                    && (reach + c.half_angle >= PI || c.axis.z >= cos(reach + c.half_angle))
            })
            .collect()
    }

    fn mark(&self, caps: &[SphericalCap], n: &Vec3, scratch: &mut Scratch, mut emit: impl FnMut(usize, u16, Horizon)) {
        let res = self.resolution;
        scratch.touched.clear();
        if scratch.state.len() != res * res {
            scratch.state = vec![0; res * res];
        }
        scratch.partial.clear();
        for (ci, cap) in caps.iter().enumerate() {
            let (i0, i1, j0, j1) = self.cap_box(cap);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    let idx = i * res + j;
                    if self.mass[idx] < MASS_FLOOR {
                        continue;
                    }
                    let st = scratch.state[idx];
                    if st == INSIDE {
                        continue;
                    }
                    let c = self.classify(idx, cap);
                    if c == UNTOUCHED {
                        continue;
                    }
                    if st == UNTOUCHED {
                        scratch.touched.push(idx as u32);
                    }
                    if c == PARTIAL {
                        scratch.partial.push((idx as u32, ci as u32));
                    }
                    scratch.state[idx] = st.max(c);
                }
            }
        }
        scratch.touched.sort_unstable();
        scratch.partial.sort_unstable();
        let mut cursor = 0;
        for &idx in &scratch.touched {
            let start = cursor;
            while cursor < scratch.partial.len() && scratch.partial[cursor].0 == idx {
                cursor += 1;
            }
            let idx = idx as usize;
            let st = core::mem::replace(&mut scratch.state[idx], UNTOUCHED);
            let hz = self.horizon(idx, n);
            let mask = match (hz, st) {
                (Horizon::Below, _) => 0,
                (Horizon::Above, INSIDE) => FULL_MASK,
                (_, INSIDE) => self.above_mask(idx, n),
                _ => {
                    scratch.near.clear();
                    scratch.near.extend(scratch.partial[start..cursor].iter().map(|&(_, ci)| caps[ci as usize]));
                    self.sub_mask(idx, &scratch.near, n)
                }
            };
            if mask != 0 {
                emit(idx, mask, hz);
            }
        }
    }

    fn above_mask(&self, idx: usize, n: &Vec3) -> u16 {
        let mut mask = 0u16;
        for k in 0..SUBSAMPLES * SUBSAMPLES {
            if self.sub_direction(idx, k).dot(n) > 0.0 {
                mask |= 1 << k;
            }
        }
        mask
    }

    fn sub_mask(&self, idx: usize, caps: &[SphericalCap], n: &Vec3) -> u16 {
        let mut mask = 0u16;
        for k in 0..SUBSAMPLES * SUBSAMPLES {
            let d = self.sub_direction(idx, k);
            if d.dot(n) > 0.0 && caps.iter().any(|c| c.contains(&d)) {
                mask |= 1 << k;
            }
        }
        mask
    }

    /// Reference membership: every sub-sample of every active patch tested
    /// against every cap.
    pub fn collect_brute_force(&self, axis: &Vec3, caps: &[SphericalCap], n: &Vec3) -> Vec<(u32, u16)> {
        let frame = LobeFrame::new(axis);
        let n_local = frame.to_local(n);
        let local: Vec<SphericalCap> = caps.iter().map(|c| c.local(&frame.t, &frame.b, &frame.z)).collect();
        self.active
            .iter()
            .filter_map(|&idx| {
                let mask = self.sub_mask(idx as usize, &local, &n_local);
                (mask != 0).then_some((idx, mask))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LobeFrame {
    pub t: Vec3,
    pub b: Vec3,
    pub z: Vec3,
}

impl LobeFrame {
    pub fn new(axis: &Vec3) -> Self {
        let (t, b) = orthonormal_basis(axis);
        Self { t, b, z: *axis }
    }

    pub fn to_local(&self, v: &Vec3) -> Vec3 {
        Vec3::new(v.dot(&self.t), v.dot(&self.b), v.dot(&self.z))
    }
}

/// Caps of every sphere as seen from `x`, dropping those entirely below the
/// horizon of `n`, widest first.
pub fn caps_for_point(x: &Vec3, n: &Vec3, spheres: &[Sphere]) -> Result<(Vec<SphericalCap>, bool)> {
    let mut degenerate = false;
    let mut caps = Vec::with_capacity(spheres.len());
    for s in spheres {
        let cap = project_sphere_to_cap(x, s)?;
        degenerate |= cap.degenerate;
        if cap.reaches_above(n) {
            caps.push(cap);
        }
    }
    caps.sort_by(|a, b| b.half_angle.total_cmp(&a.half_angle));
    Ok((caps, degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{axis_angle, fibonacci_sphere};
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn engine() -> OcclusionEngine {
        OcclusionEngine::default()
    }

    #[test]
    fn cap_examples() {
        let cap = project_sphere_to_cap(&Vec3::zeros(), &Sphere::new(Vec3::new(2.0, 0.0, 0.0), 1.0)).unwrap();
        assert!((cap.half_angle - PI / 6.0).abs() < 1e-15);
        assert!((cap.axis - Vec3::x()).norm() < 1e-15);
        let tiny = project_sphere_to_cap(&Vec3::zeros(), &Sphere::new(Vec3::z(), 1e-12)).unwrap();
        assert!(tiny.half_angle < 1e-11);
        let close = project_sphere_to_cap(&Vec3::zeros(), &Sphere::new(Vec3::new(0.0, 1.0001, 0.0), 1.0)).unwrap();
        assert!((close.half_angle.to_degrees() - 89.2).abs() < 0.05);
        let inside = project_sphere_to_cap(&Vec3::zeros(), &Sphere::new(Vec3::new(0.0, 0.5, 0.0), 1.0)).unwrap();
        assert!(inside.degenerate && inside.half_angle == PI);
        assert!(project_sphere_to_cap(&Vec3::zeros(), &Sphere::new(Vec3::zeros(), 1.0)).is_err());
    }

    #[test]
    fn radial_cdf_is_a_distribution() {
        let r = RadialCdf::new();
        assert_eq!(r.cdf(0.0), 0.0);
        assert!(r.cdf(39.0) > 1.0 - 1e-12);
        let mut prev = 0.0;
        for k in 1..400 {
            let v = r.cdf(k as f64 * 0.1);
            assert!(v >= prev);
            prev = v;
        }
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((r.cdf(r.inverse(p)) - p).abs() < 1e-9);
        }
    }

    // Independent check of the tabulated radial CDF: a grid sum of the
    // product density over the disc.
    #[test]
    fn radial_cdf_matches_area_sum() {
        let r = RadialCdf::new();
        let rho = 2.5;
        let n = 1000;
        let h = 2.0 * rho / n as f64;
        let density = |x: f64| {
            let e = exp(-x.abs());
            e / ((1.0 + e) * (1.0 + e))
        };
        let mut acc = 0.0;
        for i in 0..n {
            let a = -rho + (i as f64 + 0.5) * h;
            for j in 0..n {
                let b = -rho + (j as f64 + 0.5) * h;
                if a * a + b * b <= rho * rho {
                    acc += density(a) * density(b);
                }
            }
        }
        assert!((acc * h * h - r.cdf(rho)).abs() < 2e-3);
    }

    #[test]
    fn warp_round_trip() {
        let e = engine();
        for eta in [5.0, 20.0, 100.0] {
            let l = e.layout(eta);
            for &(t, p) in &[(1.0, 1.2), (1.7, 1.4), (1.55, 1.6), (0.9, 2.2)] {
                let d = l.direction(t, p);
                assert!((d.norm() - 1.0).abs() < 1e-12);
                let (a, b) = l.grid_coords(&d);
                let back = l.direction(a * l.delta, b * l.delta);
                assert!(crate::math::angle_between(&d, &back) < 1e-6, "eta {eta}: {d:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn full_grid_telescopes_to_one() {
        let c = IsgCoefficients::default();
        for eta in [1.0, 20.0, 100.0] {
            let g = PatchGrid::filled(64, eta, &Vec3::z());
            assert!((occlusion_fraction(&g, eta, &c) - 1.0).abs() < 1e-6);
            assert_eq!(occlusion_fraction(&PatchGrid::new(64, eta, &Vec3::z()), eta, &c), 0.0);
        }
    }

    #[test]
    fn layout_masses_match_corner_formula() {
        let e = engine();
        let l = e.layout(30.0);
        let mut g = PatchGrid::new(64, 30.0, &Vec3::z());
        for k in [100usize, 2080, 2081, 4000] {
            g.occupancy[k] = FULL_MASK;
        }
        let want: f64 = [100usize, 2080, 2081, 4000].iter().map(|&k| l.mass[k]).sum();
        assert!((occlusion_fraction(&g, 30.0, &e.coeffs) - want).abs() < 1e-15);
    }

    #[test]
    fn no_caps_no_occupancy() {
        let e = engine();
        let g = PatchGrid::new(64, 10.0, &Vec3::z());
        let out = e.collect_occluded_patches(&g, &[], &Vec3::z());
        assert_eq!(out.occupied_samples(), 0);
    }

    #[test]
    fn hemisphere_cap_marks_upper_half() {
        let e = engine();
        let n = Vec3::new(0.3, 0.1, 1.0).normalize();
        let g = PatchGrid::new(64, 10.0, &Vec3::new(1.0, 0.0, 0.2).normalize());
        let cap = SphericalCap::new(n, FRAC_PI_2 + 1e-9);
        let out = e.collect_occluded_patches(&g, &[cap], &n);
        let l = e.layout(10.0);
        let frame = LobeFrame::new(&g.lobe_axis);
        let nl = frame.to_local(&n);
        for &idx in &l.active {
            for k in 0..16 {
                let up = l.sub_direction(idx as usize, k).dot(&nl) > 0.0;
                let bit = out.occupancy[idx as usize] & (1 << k) != 0;
                assert_eq!(up, bit);
            }
        }
    }

    #[test]
    fn centered_cap_matches_lobe_mass() {
        let e = engine();
        for (eta, deg) in [(50.0, 20.0), (10.0, 30.0), (100.0, 8.0), (5.0, 60.0)] {
            let alpha = f64::to_radians(deg);
            let axis = Vec3::z();
            let l = e.layout(eta);
            let occ = l.occlusion(&axis, &[SphericalCap::new(axis, alpha)], &axis, &mut Scratch::new(64), false);
            // Exact lobe mass inside the cap, as a share of the sphere mass.
            let exact = -expm1(-eta * (1.0 - cos(alpha))) / -expm1(-2.0 * eta);
            assert!((occ.fraction - exact).abs() / exact < 0.03, "eta {eta}: {} vs {exact}", occ.fraction);
        }
    }

    #[test]
    fn enclosed_point_is_fully_occluded() {
        let e = engine();
        let sg = SphericalGaussian::from_parts(Vec3::z(), 20.0, Rgb::new(1.0, 2.0, 0.5));
        let q = OcclusionQuery { point: Vec3::zeros(), normal: Vec3::z(), spheres: vec![Sphere::new(Vec3::new(0.1, 0.0, 0.0), 1.0)] };
        let r = e.occluded_sg_integral(&sg, &q).unwrap();
        assert!(r.degenerate);
        let full = sg.integral_sphere();
        assert!((r.occluded - full).norm() <= 1e-6 * full.norm());
        let q = OcclusionQuery { spheres: vec![], ..q };
        let r = e.occluded_sg_integral(&sg, &q).unwrap();
        assert_eq!(r.occluded, Rgb::zeros());
        assert_eq!(r.unoccluded, full);
    }

    fn random_caps(seed: u64, count: usize, axis: &Vec3) -> Vec<SphericalCap> {
        let dirs = fibonacci_sphere(97);
        (0..count)
            .map(|k| {
                let s = (seed as usize * 31 + k * 17) % 97;
                let d = (axis * 1.2 + dirs[s]).normalize();
                SphericalCap::new(d, 0.05 + ((seed as usize + k * 7) % 11) as f64 * 0.09)
            })
            .collect()
    }

    #[test]
    fn refined_matches_brute_force() {
        let e = engine();
        let mut scratch = Scratch::new(64);
        for (case, eta) in [5.0, 12.0, 40.0, 100.0].into_iter().enumerate() {
            let l = e.layout(eta);
            for seed in 0..12u64 {
                let axis = axis_angle(&Vec3::new(1.0, 0.3, 0.0), 0.2 * seed as f64) * Vec3::z();
                let n = axis_angle(&Vec3::y(), 0.15 * case as f64) * Vec3::z();
                let caps = random_caps(seed + 100 * case as u64, 1 + (seed as usize % 5), &axis);
                let fast = l.collect(&axis, &caps, &n, &mut scratch);
                let slow = l.collect_brute_force(&axis, &caps, &n);
                assert_eq!(fast, slow, "eta {eta} seed {seed}");
            }
        }
    }

    #[test]
    fn cos_fraction_is_one_when_all_covered() {
        let e = engine();
        let l = e.layout(8.0);
        let axis = Vec3::new(0.0, 0.6, 0.8);
        let cap = SphericalCap::new(Vec3::z(), PI);
        let occ = l.occlusion(&axis, &[cap], &Vec3::z(), &mut Scratch::new(64), true);
        assert!((occ.cos_fraction - 1.0).abs() < 1e-12);
        assert!(occ.fraction < 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn permutation_invariant_and_monotone(seed in 0u64..1000, eta in 5.0f64..100.0, tilt in 0.0f64..1.2) {
            let e = engine();
            let l = e.layout(eta);
            let axis = Vec3::z();
            let n = axis_angle(&Vec3::x(), tilt) * Vec3::z();
            let caps = random_caps(seed, 4, &axis);
            let mut scratch = Scratch::new(64);
            let a = l.occlusion(&axis, &caps, &n, &mut scratch, true);
            let mut rev = caps.clone();
            rev.reverse();
            let b = l.occlusion(&axis, &rev, &n, &mut scratch, true);
            prop_assert_eq!(a.fraction.to_bits(), b.fraction.to_bits());
            prop_assert_eq!(a.cos_fraction.to_bits(), b.cos_fraction.to_bits());
            let fewer = l.occlusion(&axis, &caps[..2], &n, &mut scratch, false);
            prop_assert!(fewer.fraction <= a.fraction);
            prop_assert!((0.0..=1.0).contains(&a.fraction));
            let twice: Vec<SphericalCap> = caps.iter().chain(caps.iter()).copied().collect();
            let c = l.occlusion(&axis, &twice, &n, &mut scratch, false);
            prop_assert_eq!(a.fraction.to_bits(), c.fraction.to_bits());
        }

        #[test]
        fn fast_collection_matches_brute_force_anywhere(
            eta in 2.0f64..120.0,
            caps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.01f64..1.5), 1..8),
            n in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        ) {
            let e = engine();
            let l = e.layout(eta);
            let caps: Vec<SphericalCap> = caps
                .into_iter()
                .filter(|c| c.0 * c.0 + c.1 * c.1 + c.2 * c.2 > 1e-4)
                .map(|c| SphericalCap::new(Vec3::new(c.0, c.1, c.2), c.3))
                .collect();
            let n = Vec3::new(n.0, n.1, n.2).normalize();
            let axis = Vec3::new(0.2, -0.1, 1.0).normalize();
            let mut scratch = Scratch::new(64);
            prop_assert_eq!(l.collect(&axis, &caps, &n, &mut scratch), l.collect_brute_force(&axis, &caps, &n));
        }
    }
}
