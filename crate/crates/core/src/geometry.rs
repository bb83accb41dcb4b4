//! Rigid poses, pinhole cameras, triangle meshes and a BVH ray caster.

use alloc::vec::Vec;

use crate::error::{domain, invalid, Result};
use crate::math::{fabs, is_rotation, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !is_rotation(&rotation, 1e-6) {
            return Err(domain("pose rotation must be orthonormal with det +1"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// `R x + t`.
    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `R⁻¹ (x − t)`.
    #[inline]
    pub fn inverse_apply(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.transpose();
        Self { rotation: r, translation: -(r * self.translation) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.apply(&other.translation) }
    }
}

/// World point to object canonical frame.
pub fn object_inverse_transform(pose: &RigidPose, x_world: &Vec3) -> Vec3 {
    pose.inverse_apply(x_world)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    pub fn transformed_inverse(&self, pose: &RigidPose) -> Self {
        Self { origin: pose.inverse_apply(&self.origin), dir: pose.rotation.transpose() * self.dir }
    }
}

/// Pinhole camera. Camera space is `+x` right, `+y` down, `+z` forward;
/// `pose` maps camera space to world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: RigidPose,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, pose: RigidPose) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(invalid("camera focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(invalid("camera resolution must be positive"));
        }
        Ok(Self { fx, fy, cx, cy, width, height, pose })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up hint.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let f = (target - eye).normalize();
        let r = f.cross(&up).normalize();
        let d = f.cross(&r);
        let rot = Mat3::from_columns(&[r, d, f]);
        let fy = 0.5 * height as f64 / crate::math::tan(0.5 * fov_y);
        Self::new(fy, fy, 0.5 * width as f64, 0.5 * height as f64, width, height, RigidPose::new(rot, eye)?)
    }

    /// Ray through pixel `(x, y)` offset by `(jx, jy)` in `[0, 1)`.
    pub fn ray(&self, x: f64, y: f64) -> Ray {
        let d = Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0).normalize();
        Ray { origin: self.pose.translation, dir: self.pose.rotation * d }
    }

    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        self.ray(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, x: &Vec3) -> Option<(f64, f64)> {
        let c = self.pose.inverse_apply(x);
        (c.z > 0.0).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(positions: Vec<Vec3>, normals: Vec<Vec3>, uvs: Vec<[f64; 2]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = positions.len();
        if normals.len() != n || uvs.len() != n {
            return Err(invalid("mesh positions, normals and uvs must have equal length"));
        }
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(invalid(alloc::format!("triangle {k} references a missing vertex")));
            }
            let [a, b, c] = t.map(|i| positions[i as usize]);
            if (b - a).cross(&(c - a)).norm() <= 1e-14 {
                return Err(invalid(alloc::format!("triangle {k} has zero area")));
            }
        }
        let normals = normals.into_iter().map(|v| v.normalize()).collect();
        Ok(Self { positions, normals, uvs, triangles })
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for p in &self.positions {
            b.grow(p);
        }
        b
    }

    fn corners(&self, tri: usize) -> [Vec3; 3] {
        self.triangles[tri].map(|i| self.positions[i as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Slab test; returns the entry distance.
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0·∞ leaves the bounds unchanged.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    pub position: Vec3,
    /// Interpolated shading normal.
    pub normal: Vec3,
    pub geometric_normal: Vec3,
    pub uv: [f64; 2],
}

/// Möller–Trumbore; returns `(t, u, v)`.
pub fn intersect_triangle(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if fabs(det) < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some((t, u, v))
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive index; interior: index of the right child.
    start: u32,
    count: u32,
}

/// Relative distance below which two triangle hits are the same hit.
pub const HIT_TIE: f64 = 1e-10;

/// Bounding volume hierarchy over a triangle mesh (median split).
#[derive(Debug, Clone)]
pub struct Bvh {
    mesh: TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn new(mesh: TriangleMesh) -> Self {
        let mut order: Vec<u32> = (0..mesh.triangles.len() as u32).collect();
        let centroids: Vec<Vec3> =
            (0..mesh.triangles.len()).map(|k| mesh.corners(k).iter().sum::<Vec3>() / 3.0).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            Self::build(&mesh, &centroids, &mut order, 0, &mut nodes);
        }
        Self { mesh, nodes, order }
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    fn build(mesh: &TriangleMesh, centroids: &[Vec3], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &k in order.iter() {
            for p in mesh.corners(k as usize) {
                bounds.grow(&p);
            }
            cb.grow(&centroids[k as usize]);
        }
        let me = nodes.len();
        nodes.push(Node { bounds, start: offset as u32, count: order.len() as u32 });
        if order.len() <= LEAF_SIZE {
            return me;
        }
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |a, b| {
            centroids[*a as usize][axis].total_cmp(&centroids[*b as usize][axis]).then(a.cmp(b))
        });
        let (left, right) = order.split_at_mut(mid);
        Self::build(mesh, centroids, left, offset, nodes);
        let r = Self::build(mesh, centroids, right, offset + mid, nodes);
        nodes[me].count = 0;
        nodes[me].start = r as u32;
        me
    }

    /// Nearest hit with `t` in `(0, t_max)`. Hits within a relative
    /// [`HIT_TIE`] of each other count as equal.
    pub fn intersect(&self, ray: &Ray, t_max: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / ray.dir.x, 1.0 / ray.dir.y, 1.0 / ray.dir.z);
        let mut best: Option<(f64, usize, f64, f64)> = None;
        let mut limit = t_max;
        let mut stack = [0usize; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let ni = stack[sp];
            let node = &self.nodes[ni];
            if node.bounds.hit(&ray.origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &k in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.corners(k as usize);
                    if let Some((t, u, v)) = intersect_triangle(ray, &a, &b, &c) {
                        // Coincident faces resolve to the lowest index whatever the
                        // traversal order.
                        let better = match best {
                            None => t < limit,
                            Some((bt, bk, _, _)) => {
                                let tie = (t - bt).abs() <= HIT_TIE * bt;
                                (t < bt && !tie) || (tie && (k as usize) < bk)
                            }
                        };
                        if better {
                            best = Some((t, k as usize, u, v));
                            limit = limit.min(t * (1.0 + HIT_TIE));
                        }
                    }
                }
            } else {
                stack[sp] = ni + 1;
                stack[sp + 1] = node.start as usize;
                sp += 2;
            }
        }
        best.map(|(t, k, u, v)| self.hit_record(ray, t, k, u, v))
    }

    fn hit_record(&self, ray: &Ray, t: f64, k: usize, u: f64, v: f64) -> Hit {
        let [ia, ib, ic] = self.mesh.triangles[k].map(|i| i as usize);
        let m = &self.mesh;
        let w = 1.0 - u - v;
        let normal = (m.normals[ia] * w + m.normals[ib] * u + m.normals[ic] * v).normalize();
        let geometric_normal = (m.positions[ib] - m.positions[ia]).cross(&(m.positions[ic] - m.positions[ia])).normalize();
        let uv = [
            m.uvs[ia][0] * w + m.uvs[ib][0] * u + m.uvs[ic][0] * v,
            m.uvs[ia][1] * w + m.uvs[ib][1] * u + m.uvs[ic][1] * v,
        ];
        Hit { t, triangle: k, position: ray.at(t), normal, geometric_normal, uv }
    }
}

#[cfg(feature = "std")]
std::thread_local! {
    static RAY_TESTS: core::cell::Cell<u64> = const { core::cell::Cell::new(0) };
}

#[cfg(not(feature = "std"))]
static RAY_TESTS: core::sync::atomic::AtomicU64 = core::sync::atomic::AtomicU64::new(0);

/// Number of [`intersect_sphere`] calls made so far (per thread with `std`).
pub fn ray_tests() -> u64 {
    #[cfg(feature = "std")]
    return RAY_TESTS.with(|c| c.get());
    #[cfg(not(feature = "std"))]
    return RAY_TESTS.load(core::sync::atomic::Ordering::Relaxed);
}

#[inline]
fn count_ray_test() {
    #[cfg(feature = "std")]
    RAY_TESTS.with(|c| c.set(c.get() + 1));
    #[cfg(not(feature = "std"))]
    RAY_TESTS.fetch_add(1, core::sync::atomic::Ordering::Relaxed);
}

/// Nearest intersection of a ray with a sphere, `t > 0`.
pub fn intersect_sphere(ray: &Ray, center: &Vec3, radius: f64) -> Option<f64> {
    count_ray_test();
    let oc = ray.origin - center;
    let b = oc.dot(&ray.dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = crate::math::sqrt(disc);
    let t0 = -b - s;
    if t0 > 1e-9 {
        return Some(t0);
    }
    let t1 = -b + s;
    (t1 > 1e-9).then_some(t1)
}

/// Axis-aligned box `[-h, h]` with per-face UV charts laid out on a 3×2
/// atlas and flat per-face normals.
pub fn box_mesh(half: &Vec3) -> TriangleMesh {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    // (normal axis, sign, atlas cell)
    let faces = [(0usize, 1.0, 0usize), (0, -1.0, 1), (1, 1.0, 2), (1, -1.0, 3), (2, 1.0, 4), (2, -1.0, 5)];
    for (axis, sign, cell) in faces {
        let n = {
            let mut v = Vec3::zeros();
            v[axis] = sign;
            v
        };
        let (u_ax, v_ax) = ((axis + 1) % 3, (axis + 2) % 3);
        let base = positions.len() as u32;
        let (cu, cv) = ((cell % 3) as f64 / 3.0, (cell / 3) as f64 / 2.0);
        for (a, b) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let mut p = n * half[axis];
            p[u_ax] = a * half[u_ax];
            p[v_ax] = b * half[v_ax];
            positions.push(p);
            normals.push(n);
            let inset = 0.02;
            let su = inset + (1.0 - 2.0 * inset) * 0.5 * (a + 1.0);
            let sv = inset + (1.0 - 2.0 * inset) * 0.5 * (b + 1.0);
            uvs.push([cu + su / 3.0, cv + sv / 2.0]);
        }
        // Wind so the geometric normal agrees with `n`.
        let (q0, q1, q2, q3) = (base, base + 1, base + 2, base + 3);
        let tri = [q0, q1, q2];
        let [a, b, c] = tri.map(|i| positions[i as usize]);
        if (b - a).cross(&(c - a)).dot(&n) > 0.0 {
            triangles.push([q0, q1, q2]);
            triangles.push([q0, q2, q3]);
        } else {
            triangles.push([q0, q2, q1]);
            triangles.push([q0, q3, q2]);
        }
    }
    TriangleMesh { positions, normals, uvs, triangles }
}
