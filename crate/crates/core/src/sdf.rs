//! Signed distance fields used for sphere tracing, the eikonal term and the
//! minimum-SDF mask loss.

use alloc::vec::Vec;

use crate::geometry::{intersect_triangle, Ray, TriangleMesh};
use crate::hand::Sphere;
use crate::math::Vec3;

pub trait Sdf {
    fn distance(&self, p: &Vec3) -> f64;

    /// Central-difference gradient with step `h`.
    fn gradient(&self, p: &Vec3, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            g[k] = (self.distance(&(p + e)) - self.distance(&(p - e))) / (2.0 * h);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSdf {
    pub center: Vec3,
    pub radius: f64,
}

impl Sdf for SphereSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        (p - self.center).norm() - self.radius
    }
}

/// Axis-aligned box centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSdf {
    pub half_extents: Vec3,
}

impl Sdf for BoxSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        let q = p.abs() - self.half_extents;
        let outside = q.sup(&Vec3::zeros()).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }
}

/// Union of spheres.
#[derive(Debug, Clone, PartialEq)]
pub struct SpheresSdf {
    pub spheres: Vec<Sphere>,
}

impl Sdf for SpheresSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        self.spheres.iter().map(|s| (p - s.center).norm() - s.radius).fold(f64::INFINITY, f64::min)
    }
}

/// Exact distance to a closed triangle mesh; sign by ray-crossing parity.
/// Brute force, intended for small meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSdf {
    pub mesh: TriangleMesh,
}

impl MeshSdf {
    fn unsigned(&self, p: &Vec3) -> f64 {
        self.mesh
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.mesh.positions[i as usize]);
                (closest_point_on_triangle(p, &a, &b, &c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn inside(&self, p: &Vec3) -> bool {
        // An irrational-ish direction avoids hitting edges exactly.
        let ray = Ray { origin: *p, dir: Vec3::new(0.5773, 0.5774, 0.5775).normalize() };
        let crossings = self
            .mesh
            .triangles
            .iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| self.mesh.positions[i as usize]);
                intersect_triangle(&ray, &a, &b, &c).is_some()
            })
            .count();
        crossings % 2 == 1
    }
}

impl Sdf for MeshSdf {
    fn distance(&self, p: &Vec3) -> f64 {
        let d = self.unsigned(p);
        if self.inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Sphere tracing; returns the hit distance along the (unit) ray.
pub fn sphere_trace(sdf: &dyn Sdf, ray: &Ray, t_near: f64, t_far: f64) -> Option<f64> {
    let mut t = t_near;
    for _ in 0..256 {
        let d = sdf.distance(&ray.at(t));
        if d.abs() < 1e-7 * (1.0 + t) {
            return Some(t);
        }
        t += d.max(1e-7);
        if t > t_far {
            return None;
        }
    }
    None
}

/// Minimum of the SDF at `samples` stratified points on `[t_near, t_far]`.
pub fn min_along_ray(sdf: &dyn Sdf, ray: &Ray, t_near: f64, t_far: f64, samples: usize) -> f64 {
    let step = (t_far - t_near) / samples as f64;
    (0..samples).map(|k| sdf.distance(&ray.at(t_near + (k as f64 + 0.5) * step))).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_mesh;

    #[test]
    fn box_sdf_values() {
        let b = BoxSdf { half_extents: Vec3::new(1.0, 2.0, 3.0) };
        assert!((b.distance(&Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!((b.distance(&Vec3::zeros()) + 1.0).abs() < 1e-15);
        assert!((b.distance(&Vec3::new(2.0, 3.0, 0.0)) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mesh_sdf_matches_box_sdf() {
        let h = Vec3::new(0.3, 0.2, 0.1);
        let exact = BoxSdf { half_extents: h };
        let mesh = MeshSdf { mesh: box_mesh(&h) };
        for p in crate::math::fibonacci_sphere(40).iter().map(|d| d * 0.35) {
            assert!((exact.distance(&p) - mesh.distance(&p)).abs() < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn sphere_trace_hits_sphere() {
        let s = SphereSdf { center: Vec3::zeros(), radius: 1.0 };
        let ray = Ray { origin: Vec3::new(0.0, 0.0, -3.0), dir: Vec3::z() };
        assert!((sphere_trace(&s, &ray, 0.0, 10.0).unwrap() - 2.0).abs() < 1e-6);
        let miss = Ray { origin: Vec3::new(0.0, 2.0, -3.0), dir: Vec3::z() };
        assert!(sphere_trace(&s, &miss, 0.0, 10.0).is_none());
    }

    #[test]
    fn gradient_of_sphere_is_unit() {
        let s = SphereSdf { center: Vec3::new(0.1, 0.2, 0.3), radius: 0.5 };
        let g = s.gradient(&Vec3::new(1.0, -0.5, 0.2), 1e-3);
        assert!((g.norm() - 1.0).abs() < 1e-6);
    }
}
