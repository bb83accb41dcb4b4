//! Bundled synthetic fixture: a checkerboard box held by an articulated
//! sphere-built hand, turned in front of a fixed camera.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::env::SGEnvironment;
use crate::error::Result;
use crate::geometry::{box_mesh, Camera, RigidPose};
use crate::hand::{HandPose, Joint, SkinnedHand, Sphere};
use crate::material::{Grid, Material, SKIN_INDIRECT};
use crate::math::{axis_angle, exp, fibonacci_sphere, rgb, sin, Mat3, Mat4, Rgb, Vec3, TAU};
use crate::shading::{indirect_scale, Frame, HandRig, ObjectShape, Scene};
use crate::sg::SphericalGaussian;

pub const BOX_HALF: [f64; 3] = [0.06, 0.09, 0.03];
pub const TEXTURE_SIZE: usize = 32;
pub const ENV_SHARPNESS: f64 = 12.0;
pub const CHECKER_A: [f64; 3] = [0.85, 0.55, 0.25];
pub const CHECKER_B: [f64; 3] = [0.20, 0.40, 0.70];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoOptions {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub with_hand: bool,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self { frames: 8, width: 64, height: 64, with_hand: true }
    }
}

/// Unit icosphere with `levels` midpoint subdivisions.
pub fn icosphere(levels: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + crate::math::sqrt(5.0)) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0), (1.0, t, 0.0), (-1.0, -t, 0.0), (1.0, -t, 0.0),
        (0.0, -1.0, t), (0.0, 1.0, t), (0.0, -1.0, -t), (0.0, 1.0, -t),
        (t, 0.0, -1.0), (t, 0.0, 1.0), (-t, 0.0, -1.0), (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut split = |a: usize, b: usize, v: &mut Vec<Vec3>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalize());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = split(a, b, &mut v);
            let bc = split(b, c, &mut v);
            let ca = split(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

struct HandBuild {
    seeds: Vec<Sphere>,
    owner: Vec<usize>,
    joints: Vec<Joint>,
}

/// Sphere seeds and joints of the grasp, in the object frame.
fn hand_layout() -> HandBuild {
    let [hx, _, hz] = BOX_HALF;
    let mut seeds = Vec::new();
    let mut owner = Vec::new();
    let mut joints = vec![Joint { parent: None, origin: Vec3::new(hx + 0.013, 0.0, 0.0) }];
    // Palm against the +x face.
    for y in [-0.05, -0.025, 0.0, 0.025, 0.05] {
        for z in [-0.024, -0.008, 0.008, 0.024] {
            seeds.push(Sphere::new(Vec3::new(hx + 0.013, y, z), 0.012));
            owner.push(0);
        }
    }
    seeds.push(Sphere::new(Vec3::new(hx + 0.025, -0.08, 0.0), 0.014));
    owner.push(0);
    // Four fingers across the front (+z) face, three segments each.
    let x0 = hx + 0.008;
    let seg = 0.024;
    for y in [0.045, 0.015, -0.015, -0.045] {
        for s in 0..3 {
            let j = joints.len();
            let start = x0 - s as f64 * seg;
            joints.push(Joint { parent: Some(if s == 0 { 0 } else { j - 1 }), origin: Vec3::new(start, y, hz) });
            let r = 0.0085 - 0.0006 * s as f64;
            for k in 0..6 {
                let x = start - (k as f64 + 0.5) * seg / 6.0;
                seeds.push(Sphere::new(Vec3::new(x, y, hz + r + 0.0015), r));
                owner.push(j);
            }
        }
    }
    // Thumb across the back (−z) face.
    for s in 0..3 {
        let j = joints.len();
        let start = x0 - s as f64 * 0.02;
        joints.push(Joint { parent: Some(if s == 0 { 0 } else { j - 1 }), origin: Vec3::new(start, 0.0, -hz) });
        let r = 0.0095 - 0.0007 * s as f64;
        for k in 0..5 {
            let x = start - (k as f64 + 0.5) * 0.004;
            seeds.push(Sphere::new(Vec3::new(x, 0.0, -hz - r - 0.0015), r));
            owner.push(j);
        }
    }
    HandBuild { seeds, owner, joints }
}

/// The demo hand: the union of icospheres at the sphere seeds, each rigidly
/// bound to its joint, plus the seeds themselves.
pub fn demo_hand() -> Result<(SkinnedHand, Vec<Sphere>)> {
    let build = hand_layout();
    let (unit, tris) = icosphere(1);
    let nj = build.joints.len();
    let mut verts = Vec::new();
    let mut normals = Vec::new();
    let mut weights = Vec::new();
    let mut faces = Vec::new();
    let mut tips = Vec::new();
    for (s, &j) in build.seeds.iter().zip(&build.owner) {
        let base = verts.len();
        for d in &unit {
            verts.push(s.center + d * s.radius);
            normals.push(*d);
            let mut w = vec![0.0; nj];
            w[j] = 1.0;
            weights.push(w);
        }
        faces.extend(tris.iter().map(|t| t.map(|i| base + i)));
    }
    // Fingertips: the most distal vertex of the last sphere of each chain.
    let mut last_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (k, &j) in build.owner.iter().enumerate() {
        last_of.insert(j, k);
    }
    for j in 0..nj {
        let is_leaf = j > 0 && !build.joints.iter().any(|c| c.parent == Some(j));
        if let (true, Some(&k)) = (is_leaf, last_of.get(&j)) {
            tips.push(k * unit.len() + (0..unit.len()).min_by(|&a, &b| unit[a].x.total_cmp(&unit[b].x)).unwrap_or(0));
        }
    }
    let hand = SkinnedHand::new(verts, normals, weights, build.joints, faces, tips)?;
    Ok((hand, build.seeds))
}

fn rot_y(deg: f64) -> Mat3 {
    axis_angle(&Vec3::y(), deg.to_radians())
}

/// Object pose of frame `k`: a turn about the world up axis after a fixed tilt.
pub fn object_pose(k: usize, frames: usize) -> RigidPose {
    let tilt = axis_angle(&Vec3::x(), (20.0f64).to_radians());
    let spin = axis_angle(&Vec3::y(), TAU * k as f64 / frames.max(1) as f64);
    RigidPose { rotation: spin * tilt, translation: Vec3::zeros() }
}

/// Hand pose of frame `k`: rigidly attached to the object, fingers lifting
/// by a few degrees.
pub fn hand_pose(hand: &SkinnedHand, pose: &RigidPose, k: usize) -> Result<HandPose> {
    let mut root = Mat4::identity();
    root.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    root.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    let rotations: Vec<Mat3> = (0..hand.joint_count())
        .map(|j| {
            if j == 0 {
                Mat3::identity()
            } else {
                let lift = 2.0 + 2.0 * sin(k as f64 + j as f64);
                // Finger joints lift towards +z, thumb joints towards −z.
                if j <= 12 { rot_y(lift) } else { rot_y(-lift) }
            }
        })
        .collect();
    HandPose::from_local_rotations(hand, &root, &rotations)
}

/// Radiance of the demo sky: a soft ambient gradient and a warm key light.
pub fn demo_sky(dir: &Vec3) -> Rgb {
    let up = 0.5 * (dir.y + 1.0);
    let ambient = rgb(0.35, 0.4, 0.5) * (0.4 + 0.6 * up);
    let key = Vec3::new(-0.4, 0.7, 0.6).normalize();
    let fill = Vec3::new(0.7, 0.2, 0.7).normalize();
    ambient + rgb(1.6, 1.4, 1.1) * exp(6.0 * (dir.dot(&key) - 1.0)) + rgb(0.3, 0.4, 0.6) * exp(4.0 * (dir.dot(&fill) - 1.0))
}

/// 128 Fibonacci lobes whose amplitudes reproduce [`demo_sky`] at the
/// lobe axes.
pub fn demo_environment() -> SGEnvironment {
    let axes = fibonacci_sphere(crate::env::DEFAULT_LOBES);
    let unit: Vec<SphericalGaussian> = axes.iter().map(|a| SphericalGaussian::from_parts(*a, ENV_SHARPNESS, Rgb::zeros())).collect();
    let kappa = indirect_scale(&unit);
    SGEnvironment::new(unit.into_iter().map(|l| SphericalGaussian { amplitude: demo_sky(&l.axis) * kappa, ..l }).collect())
}

/// Checkerboard of `size²` texels with squares of `square` texels.
pub fn checkerboard(size: usize, square: usize, a: Rgb, b: Rgb) -> Grid<Rgb> {
    let texels = (0..size * size).map(|k| if ((k / size) / square + (k % size) / square).is_multiple_of(2) { a } else { b }).collect();
    Grid { width: size, height: size, texels }
}

pub fn demo_material() -> Material {
    let a = rgb(CHECKER_A[0], CHECKER_A[1], CHECKER_A[2]);
    let b = rgb(CHECKER_B[0], CHECKER_B[1], CHECKER_B[2]);
    let n = TEXTURE_SIZE;
    let roughness = (0..n * n).map(|k| 0.45 + 0.1 * ((k % n) as f64 / (n - 1) as f64)).collect();
    Material {
        albedo: checkerboard(n, 4, a, b),
        roughness: Grid { width: n, height: n, texels: roughness },
        specular: Rgb::repeat(0.04),
        indirect: rgb(SKIN_INDIRECT[0], SKIN_INDIRECT[1], SKIN_INDIRECT[2]),
    }
}

pub fn demo_camera(width: usize, height: usize) -> Result<Camera> {
    Camera::look_at(Vec3::new(0.0, 0.1, 0.32), Vec3::zeros(), Vec3::y(), (42.0f64).to_radians(), width, height)
}

pub fn demo_scene(opts: &DemoOptions) -> Result<Scene> {
    let half = Vec3::new(BOX_HALF[0], BOX_HALF[1], BOX_HALF[2]);
    let camera = demo_camera(opts.width, opts.height)?;
    let rig = if opts.with_hand {
        let (hand, seeds) = demo_hand()?;
        Some(HandRig::new(hand, &seeds)?)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(opts.frames);
    for k in 0..opts.frames {
        let pose = object_pose(k, opts.frames);
        let hand_pose = match &rig {
            Some(r) => Some(hand_pose(&r.hand, &pose, k)?),
            None => None,
        };
        frames.push(Frame { object_pose: pose, hand_pose, camera });
    }
    Ok(Scene {
        mesh: box_mesh(&half),
        shape: ObjectShape::Box { half_extents: half },
        frames,
        environment: demo_environment(),
        material: demo_material(),
        hand: rig,
    })
}
