//! JSON scene, environment, material and hand files.
//!
//! Paths inside a scene file are relative to the scene file's directory.
//! Rotations are row-major 3×3, hand joint transforms row-major 4×4, and
//! camera extrinsics map camera coordinates to world coordinates.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use texsg_core::env::SGEnvironment;
use texsg_core::geometry::{Camera, RigidPose};
use texsg_core::hand::{HandPose, Joint, SkinnedHand, Sphere};
use texsg_core::material::{Grid, Material};
use texsg_core::math::{Mat3, Mat4, Vec3};
use texsg_core::sg::SphericalGaussian;
use texsg_core::shading::{Frame, HandRig, ObjectShape, Scene};

use crate::imageio;
use crate::obj;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LobeFile {
    pub axis: [f64; 3],
    pub sharpness: f64,
    pub amplitude: [f64; 3],
}

/// An environment file is a JSON array of lobes.
pub type EnvFile = Vec<LobeFile>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SphereFile {
    pub center: [f64; 3],
    pub radius: f64,
}

pub type SeedsFile = Vec<SphereFile>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct JointFile {
    pub parent: Option<usize>,
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HandFile {
    pub vertices: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    /// One row per vertex, one column per joint; rows sum to 1.
    pub weights: Vec<Vec<f64>>,
    pub joints: Vec<JointFile>,
    #[serde(default)]
    pub faces: Vec<[usize; 3]>,
    #[serde(default)]
    pub fingertips: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub extrinsics: PoseFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FrameFile {
    pub object_pose: PoseFile,
    /// One row-major 4×4 transform per joint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_pose: Option<Vec<[f64; 16]>>,
    pub camera: CameraFile,
}

/// Albedo texels in linear RGB, either inline or as an sRGB PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum AlbedoFile {
    Embedded { width: usize, height: usize, texels: Vec<[f64; 3]> },
    Png { png: String },
}

/// Roughness texels, inline or as a linear grayscale PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum RoughnessFile {
    Embedded { width: usize, height: usize, texels: Vec<f64> },
    Png { png: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MaterialFile {
    pub albedo: AlbedoFile,
    pub roughness: RoughnessFile,
    pub specular: [f64; 3],
    pub indirect: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct HandRef {
    pub asset: String,
    pub seeds: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeFile {
    #[default]
    Mesh,
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    /// OBJ with texture coordinates.
    pub mesh: String,
    #[serde(default)]
    pub shape: ShapeFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandRef>,
    pub environment: String,
    pub material: String,
    pub frames: Vec<FrameFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IndexedFrame {
    pub index: usize,
    #[serde(flatten)]
    pub frame: FrameFile,
}

/// `poses.json` of an observation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub frames: Vec<IndexedFrame>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn env_to_file(env: &SGEnvironment) -> EnvFile {
    env.world_lobes()
        .iter()
        .map(|l| LobeFile { axis: arr3(&l.axis), sharpness: l.sharpness, amplitude: arr3(&l.amplitude) })
        .collect()
}

pub fn env_from_file(file: &EnvFile) -> Result<SGEnvironment> {
    let lobes = file
        .iter()
        .enumerate()
        .map(|(i, l)| SphericalGaussian::new(v3(&l.axis), l.sharpness, v3(&l.amplitude)).with_context(|| format!("lobe {i}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(SGEnvironment::new(lobes))
}

pub fn load_env(path: &Path) -> Result<SGEnvironment> {
    env_from_file(&read_json(path)?).with_context(|| format!("invalid environment {}", path.display()))
}

fn pose_to_file(p: &RigidPose) -> PoseFile {
    let r = &p.rotation;
    PoseFile {
        rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        translation: arr3(&p.translation),
    }
}

fn pose_from_file(p: &PoseFile) -> Result<RigidPose> {
    Ok(RigidPose::new(Mat3::from_row_slice(&p.rotation), v3(&p.translation))?)
}

fn camera_to_file(c: &Camera) -> CameraFile {
    CameraFile { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height, extrinsics: pose_to_file(&c.pose) }
}

fn camera_from_file(c: &CameraFile) -> Result<Camera> {
    Ok(Camera::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, pose_from_file(&c.extrinsics)?)?)
}

pub fn frame_to_file(f: &Frame) -> FrameFile {
    FrameFile {
        object_pose: pose_to_file(&f.object_pose),
        hand_pose: f.hand_pose.as_ref().map(|h| {
            h.joint_transforms
                .iter()
                .map(|m| {
                    let mut out = [0.0; 16];
                    for r in 0..4 {
                        for c in 0..4 {
                            out[4 * r + c] = m[(r, c)];
                        }
                    }
                    out
                })
                .collect()
        }),
        camera: camera_to_file(&f.camera),
    }
}

pub fn frame_from_file(f: &FrameFile) -> Result<Frame> {
    let hand_pose = match &f.hand_pose {
        Some(ms) => Some(HandPose::new(ms.iter().map(|m| Mat4::from_row_slice(m)).collect())?),
        None => None,
    };
    Ok(Frame { object_pose: pose_from_file(&f.object_pose)?, hand_pose, camera: camera_from_file(&f.camera)? })
}

pub fn hand_to_file(h: &SkinnedHand) -> HandFile {
    HandFile {
        vertices: h.canonical_vertices.iter().map(arr3).collect(),
        normals: h.canonical_normals.iter().map(arr3).collect(),
        weights: h.skinning_weights.clone(),
        joints: h.joints.iter().map(|j| JointFile { parent: j.parent, origin: arr3(&j.origin) }).collect(),
        faces: h.faces.clone(),
        fingertips: h.fingertips.clone(),
    }
}

pub fn hand_from_file(f: &HandFile) -> Result<SkinnedHand> {
    Ok(SkinnedHand::new(
        f.vertices.iter().map(v3).collect(),
        f.normals.iter().map(v3).collect(),
        f.weights.clone(),
        f.joints.iter().map(|j| Joint { parent: j.parent, origin: v3(&j.origin) }).collect(),
        f.faces.clone(),
        f.fingertips.clone(),
    )?)
}

pub fn material_to_file(m: &Material) -> MaterialFile {
    MaterialFile {
        albedo: AlbedoFile::Embedded { width: m.albedo.width, height: m.albedo.height, texels: m.albedo.texels.iter().map(arr3).collect() },
        roughness: RoughnessFile::Embedded { width: m.roughness.width, height: m.roughness.height, texels: m.roughness.texels.clone() },
        specular: arr3(&m.specular),
        indirect: arr3(&m.indirect),
    }
}

pub fn material_from_file(f: &MaterialFile, dir: &Path) -> Result<Material> {
    let albedo = match &f.albedo {
        AlbedoFile::Embedded { width, height, texels } => Grid::new(*width, *height, texels.iter().map(v3).collect())?,
        AlbedoFile::Png { png } => imageio::read_albedo_png(&dir.join(png))?,
    };
    let roughness = match &f.roughness {
        RoughnessFile::Embedded { width, height, texels } => Grid::new(*width, *height, texels.clone())?,
        RoughnessFile::Png { png } => imageio::read_gray_png_grid(&dir.join(png))?,
    };
    Ok(Material::new(albedo, roughness, v3(&f.specular), v3(&f.indirect))?)
}

pub fn load_material(path: &Path) -> Result<Material> {
    let dir = path.parent().unwrap_or(Path::new("."));
    material_from_file(&read_json(path)?, dir).with_context(|| format!("invalid material {}", path.display()))
}

/// Every path a scene file pulls in, for the manifest.
pub fn scene_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    let file: SceneFile = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = vec![path.to_path_buf(), dir.join(&file.mesh), dir.join(&file.environment), dir.join(&file.material)];
    if let Some(h) = &file.hand {
        out.push(dir.join(&h.asset));
        out.push(dir.join(&h.seeds));
    }
    Ok(out)
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let file: SceneFile = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let ctx = |what: &str, p: &str| format!("invalid {what} {}", dir.join(p).display());
    let mesh = obj::read_obj(&dir.join(&file.mesh))?;
    let environment = load_env(&dir.join(&file.environment))?;
    let material = load_material(&dir.join(&file.material))?;
    let hand = match &file.hand {
        Some(h) => {
            let asset: HandFile = read_json(&dir.join(&h.asset))?;
            let hand = hand_from_file(&asset).with_context(|| ctx("hand asset", &h.asset))?;
            let seeds: SeedsFile = read_json(&dir.join(&h.seeds))?;
            let seeds: Vec<Sphere> = seeds.iter().map(|s| Sphere::new(v3(&s.center), s.radius)).collect();
            Some(HandRig::new(hand, &seeds).with_context(|| ctx("sphere seeds", &h.seeds))?)
        }
        None => None,
    };
    let frames = file
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| frame_from_file(f).with_context(|| format!("frame {i} of {}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        bail!("{} has no frames", path.display());
    }
    if frames.iter().any(|f| f.hand_pose.is_some()) && hand.is_none() {
        bail!("{} poses a hand but references no hand asset", path.display());
    }
    if let Some(rig) = &hand {
        let joints = rig.hand.joint_count();
        if let Some(bad) = frames.iter().position(|f| f.hand_pose.as_ref().is_some_and(|p| p.joint_transforms.len() != joints)) {
            bail!("frame {bad} of {} has the wrong number of joint transforms", path.display());
        }
    }
    let shape = match file.shape {
        ShapeFile::Mesh => ObjectShape::Mesh,
        ShapeFile::Box { half_extents } => ObjectShape::Box { half_extents: v3(&half_extents) },
    };
    Ok(Scene { mesh, shape, frames, environment, material, hand })
}

/// Write `scene` as `scene.json` plus its referenced files into `dir`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    obj::write_obj(&dir.join("object.obj"), &scene.mesh)?;
    write_json(&dir.join("env.json"), &env_to_file(&scene.environment))?;
    write_json(&dir.join("material.json"), &material_to_file(&scene.material))?;
    let hand = match &scene.hand {
        Some(rig) => {
            write_json(&dir.join("hand.json"), &hand_to_file(&rig.hand))?;
            let seeds: SeedsFile = rig.spheres.spheres.iter().map(|s| SphereFile { center: arr3(&s.center), radius: s.radius }).collect();
            write_json(&dir.join("seeds.json"), &seeds)?;
            Some(HandRef { asset: "hand.json".into(), seeds: "seeds.json".into() })
        }
        None => None,
    };
    let file = SceneFile {
        mesh: "object.obj".into(),
        shape: match scene.shape {
            ObjectShape::Mesh => ShapeFile::Mesh,
            ObjectShape::Box { half_extents } => ShapeFile::Box { half_extents: arr3(&half_extents) },
        },
        hand,
        environment: "env.json".into(),
        material: "material.json".into(),
        frames: scene.frames.iter().map(frame_to_file).collect(),
    };
    let path = dir.join("scene.json");
    write_json(&path, &file)?;
    Ok(path)
}

/// JSON schemas of every file format, by file name.
pub fn schemas() -> Vec<(&'static str, serde_json::Value)> {
    let s = |v: schemars::Schema| v.to_value();
    vec![
        ("scene.schema.json", s(schemars::schema_for!(SceneFile))),
        ("env.schema.json", s(schemars::schema_for!(EnvFile))),
        ("material.schema.json", s(schemars::schema_for!(MaterialFile))),
        ("hand.schema.json", s(schemars::schema_for!(HandFile))),
        ("seeds.schema.json", s(schemars::schema_for!(SeedsFile))),
        ("poses.schema.json", s(schemars::schema_for!(PosesFile))),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use texsg_core::demo::{demo_scene, DemoOptions};

    #[test]
    fn frame_round_trip_is_exact() {
        let scene = demo_scene(&DemoOptions { frames: 2, ..DemoOptions::default() }).unwrap();
        for f in &scene.frames {
            let text = serde_json::to_string(&frame_to_file(f)).unwrap();
            let back = frame_from_file(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(&back, f);
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"[{"axis":[0,0,1],"sharpness":2,"amplitude":[1,1,1],"extra":1}]"#;
        assert!(serde_json::from_str::<EnvFile>(bad).is_err());
    }

    #[test]
    fn env_rejects_bad_lobes() {
        let f = vec![LobeFile { axis: [0.0, 0.0, 0.0], sharpness: 2.0, amplitude: [1.0; 3] }];
        assert!(env_from_file(&f).is_err());
    }
}
