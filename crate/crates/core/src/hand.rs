//! Skinned hand: linear blend skinning and the power-partitioned occluder
//! spheres that stand in for the hand during occlusion queries.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math::{fabs, is_rotation, Mat3, Mat4, Vec3};

pub const DEFAULT_SPHERES: usize = 108;
/// Neighbours used when interpolating skinning weights at arbitrary points.
pub const IDW_NEIGHBOURS: usize = 4;
/// Blended transforms with a worse condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub parent: Option<usize>,
    /// Rest-pose pivot of the joint in the canonical frame.
    pub origin: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedHand {
    pub canonical_vertices: Vec<Vec3>,
    pub canonical_normals: Vec<Vec3>,
    /// One row per vertex, one column per joint.
    pub skinning_weights: Vec<Vec<f64>>,
    pub joints: Vec<Joint>,
    pub faces: Vec<[usize; 3]>,
    pub fingertips: Vec<usize>,
}

impl SkinnedHand {
    pub fn new(
        canonical_vertices: Vec<Vec3>,
        canonical_normals: Vec<Vec3>,
        skinning_weights: Vec<Vec<f64>>,
        joints: Vec<Joint>,
        faces: Vec<[usize; 3]>,
        fingertips: Vec<usize>,
    ) -> Result<Self> {
        let n = canonical_vertices.len();
        let nj = joints.len();
        if nj == 0 {
            return Err(invalid("hand needs at least one joint"));
        }
        if canonical_normals.len() != n || skinning_weights.len() != n {
            return Err(invalid("hand vertex, normal and weight counts differ"));
        }
        for (i, row) in skinning_weights.iter().enumerate() {
            if row.len() != nj {
                return Err(invalid(alloc::format!("weight row {i} has {} entries, expected {nj}", row.len())));
            }
            if row.iter().any(|&w| !(w >= 0.0)) || fabs(row.iter().sum::<f64>() - 1.0) > 1e-6 {
                return Err(invalid(alloc::format!("weight row {i} is not a convex combination")));
            }
        }
        if canonical_normals.iter().any(|nm| fabs(nm.norm() - 1.0) > 1e-5) {
            return Err(invalid("hand normals must be unit length"));
        }
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(invalid("joint parents must precede their children"));
                }
            }
        }
        if faces.iter().flatten().chain(fingertips.iter()).any(|&v| v >= n) {
            return Err(invalid("face or fingertip index out of range"));
        }
        Ok(Self { canonical_vertices, canonical_normals, skinning_weights, joints, faces, fingertips })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.canonical_vertices.len()
    }

    /// Inverse-distance weights over the nearest [`IDW_NEIGHBOURS`] of
    /// `vertices` (posed or canonical), returning a convex weight row.
    pub fn interpolated_weights(&self, vertices: &[Vec3], x: &Vec3) -> Vec<f64> {
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(IDW_NEIGHBOURS + 1);
        for (i, v) in vertices.iter().enumerate() {
            let d = (v - x).norm_squared();
            if nearest.len() < IDW_NEIGHBOURS || d < nearest[nearest.len() - 1].0 {
                let pos = nearest.partition_point(|&(e, _)| e <= d);
                nearest.insert(pos, (d, i));
                nearest.truncate(IDW_NEIGHBOURS);
            }
        }
        let mut out = vec![0.0; self.joint_count()];
        if let Some(&(d0, i0)) = nearest.first() {
            if d0 == 0.0 {
                out.copy_from_slice(&self.skinning_weights[i0]);
                return out;
            }
        }
        let mut total = 0.0;
        for &(d, i) in &nearest {
            let w = 1.0 / crate::math::sqrt(d);
            total += w;
            for (o, s) in out.iter_mut().zip(&self.skinning_weights[i]) {
                *o += w * s;
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub joint_transforms: Vec<Mat4>,
}

impl HandPose {
    pub fn new(joint_transforms: Vec<Mat4>) -> Result<Self> {
        for t in &joint_transforms {
            let r: Mat3 = t.fixed_view::<3, 3>(0, 0).into_owned();
            if !is_rotation(&r, 1e-6) {
                return Err(invalid("joint transform rotation block is not orthonormal"));
            }
            if t.row(3).transpose() != nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0) {
                return Err(invalid("joint transform is not affine"));
            }
        }
        Ok(Self { joint_transforms })
    }

    pub fn identity(joints: usize) -> Self {
        Self { joint_transforms: vec![Mat4::identity(); joints] }
    }

    /// Forward kinematics: each joint rotates its subtree about its rest
    /// pivot, then `root` places the whole hand.
    pub fn from_local_rotations(hand: &SkinnedHand, root: &Mat4, rotations: &[Mat3]) -> Result<Self> {
        if rotations.len() != hand.joint_count() {
            return Err(invalid("one local rotation per joint is required"));
        }
        let mut out: Vec<Mat4> = Vec::with_capacity(rotations.len());
        for (j, r) in hand.joints.iter().zip(rotations) {
            let local = translation(&j.origin) * rotation(r) * translation(&-j.origin);
            let parent = j.parent.map_or(*root, |p| out[p]);
            out.push(parent * local);
        }
        Self::new(out)
    }
}

pub fn translation(t: &Vec3) -> Mat4 {
    Mat4::new_translation(t)
}

pub fn rotation(r: &Mat3) -> Mat4 {
    r.to_homogeneous()
}

/// `Σ_i w_i T_i`.
pub fn blend(weights: &[f64], pose: &HandPose) -> Mat4 {
    let mut m = Mat4::zeros();
    for (w, t) in weights.iter().zip(&pose.joint_transforms) {
        if *w != 0.0 {
            m += t * *w;
        }
    }
    m
}

fn apply(m: &Mat4, x: &Vec3) -> Vec3 {
    m.fixed_view::<3, 3>(0, 0) * x + m.fixed_view::<3, 1>(0, 3)
}

fn check_pose(hand: &SkinnedHand, pose: &HandPose) -> Result<()> {
    if pose.joint_transforms.len() != hand.joint_count() {
        return Err(invalid("pose joint count does not match the hand"));
    }
    Ok(())
}

/// Posed vertices and normals.
pub fn lbs_forward(hand: &SkinnedHand, pose: &HandPose) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    check_pose(hand, pose)?;
    let mut verts = Vec::with_capacity(hand.vertex_count());
    let mut normals = Vec::with_capacity(hand.vertex_count());
    for ((v, n), w) in hand.canonical_vertices.iter().zip(&hand.canonical_normals).zip(&hand.skinning_weights) {
        let m = blend(w, pose);
        let a: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        if a.determinant() <= 0.0 {
            return Err(Error::SingularSkinning(f64::INFINITY));
        }
        verts.push(apply(&m, v));
        normals.push((a * n).normalize());
    }
    Ok((verts, normals))
}

/// Condition number of the linear block of a blended transform.
pub fn condition_number(m: &Mat4) -> f64 {
    let a: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
    let s = a.singular_values();
    let (hi, lo) = (s.max(), s.min());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `(Σ w_i T_i)⁻¹ x_obs`.
pub fn lbs_inverse(hand: &SkinnedHand, pose: &HandPose, x_obs: &Vec3, weights: &[f64]) -> Result<Vec3> {
    check_pose(hand, pose)?;
    if weights.len() != hand.joint_count() {
        return Err(invalid("weight vector length does not match joint count"));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) || fabs(weights.iter().sum::<f64>() - 1.0) > 1e-6 {
        return Err(invalid("skinning weights must be a convex combination"));
    }
    let m = blend(weights, pose);
    let cond = condition_number(&m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularSkinning(cond));
    }
    let a: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vec3 = m.fixed_view::<3, 1>(0, 3).into_owned();
    let inv = a.try_inverse().ok_or(Error::SingularSkinning(cond))?;
    Ok(inv * (x_obs - t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandSphereSet {
    pub spheres: Vec<Sphere>,
    /// Vertex indices owned by each sphere; disjoint and covering.
    pub partition: Vec<Vec<usize>>,
}

impl HandSphereSet {
    pub fn empty_cells(&self) -> Vec<usize> {
        self.partition.iter().enumerate().filter(|(_, c)| c.is_empty()).map(|(i, _)| i).collect()
    }

    /// Spheres expressed in another frame via a rigid map `x ↦ R x + t`.
    pub fn transformed(&self, r: &Mat3, t: &Vec3) -> Vec<Sphere> {
        self.spheres.iter().map(|s| Sphere::new(r * s.center + t, s.radius)).collect()
    }
}

#[inline]
pub fn power_distance(x: &Vec3, s: &Sphere) -> f64 {
    (x - s.center).norm_squared() - s.radius * s.radius
}

/// Assign each canonical vertex to the seed of least power distance; ties go
/// to the lowest index. Empty cells are kept (and logged).
pub fn power_partition(hand: &SkinnedHand, seeds: &[Sphere]) -> Result<HandSphereSet> {
    if seeds.is_empty() {
        return Err(invalid("power partition needs at least one seed"));
    }
    if seeds.iter().any(|s| !(s.radius > 0.0)) {
        return Err(invalid("sphere seeds must have positive radii"));
    }
    let mut partition = vec![Vec::new(); seeds.len()];
    for (vi, v) in hand.canonical_vertices.iter().enumerate() {
        let mut best = 0;
        let mut best_d = power_distance(v, &seeds[0]);
        for (i, s) in seeds.iter().enumerate().skip(1) {
            let d = power_distance(v, s);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        partition[best].push(vi);
    }
    let set = HandSphereSet { spheres: seeds.to_vec(), partition };
    let empty = set.empty_cells();
    if !empty.is_empty() {
        log::warn!("{} power cells are empty; their spheres keep the seed parameters", empty.len());
    }
    Ok(set)
}

/// Refit every sphere to its posed cell: the center is the vertex mean and
/// the radius the mean normal-projected distance to it.
pub fn update_posed_spheres(set: &HandSphereSet, posed_vertices: &[Vec3], posed_normals: &[Vec3]) -> HandSphereSet {
    let mut spheres = set.spheres.clone();
    for (sphere, cell) in spheres.iter_mut().zip(&set.partition) {
        if cell.is_empty() {
            continue;
        }
        let inv = 1.0 / cell.len() as f64;
        let center = cell.iter().map(|&j| posed_vertices[j]).sum::<Vec3>() * inv;
        let radius = cell.iter().map(|&j| fabs(posed_normals[j].dot(&(posed_vertices[j] - center)))).sum::<f64>() * inv;
        *sphere = Sphere::new(center, radius);
    }
    HandSphereSet { spheres, partition: set.partition.clone() }
}
