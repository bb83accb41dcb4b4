//! Wavefront OBJ meshes with texture coordinates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use texsg_core::geometry::TriangleMesh;
use texsg_core::math::Vec3;

/// Read every object of an OBJ file into one triangle mesh. Faces are
/// triangulated; missing normals are replaced by area-weighted vertex
/// normals. Texture coordinates are required.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let opts = tobj::LoadOptions { single_index: true, triangulate: true, ignore_points: true, ignore_lines: true };
    let (models, _) = tobj::load_obj(path, &opts).with_context(|| format!("cannot load mesh {}", path.display()))?;
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut triangles = Vec::new();
    for m in &models {
        let mesh = &m.mesh;
        let base = positions.len() as u32;
        let n = mesh.positions.len() / 3;
        if mesh.texcoords.len() != 2 * n {
            bail!("mesh {} has no texture coordinates for object '{}'", path.display(), m.name);
        }
        positions.extend(mesh.positions.chunks_exact(3).map(|p| Vec3::new(p[0], p[1], p[2])));
        uvs.extend(mesh.texcoords.chunks_exact(2).map(|t| [t[0], t[1]]));
        let tris: Vec<[u32; 3]> = mesh.indices.chunks_exact(3).map(|t| [t[0] + base, t[1] + base, t[2] + base]).collect();
        if mesh.normals.len() == 3 * n {
            normals.extend(mesh.normals.chunks_exact(3).map(|v| Vec3::new(v[0], v[1], v[2])));
        } else {
            let start = normals.len();
            normals.resize(start + n, Vec3::zeros());
            for t in &tris {
                let [a, b, c] = t.map(|i| positions[i as usize]);
                let w = (b - a).cross(&(c - a));
                for &i in t {
                    normals[i as usize] += w;
                }
            }
        }
        triangles.extend(tris);
    }
    if triangles.is_empty() {
        bail!("mesh {} has no faces", path.display());
    }
    TriangleMesh::new(positions, normals, uvs, triangles).with_context(|| format!("invalid mesh {}", path.display()))
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    let mut s = String::new();
    for p in &mesh.positions {
        writeln!(s, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in &mesh.uvs {
        writeln!(s, "vt {} {}", t[0], t[1])?;
    }
    for n in &mesh.normals {
        writeln!(s, "vn {} {} {}", n.x, n.y, n.z)?;
    }
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| i + 1);
        writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")?;
    }
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use texsg_core::geometry::box_mesh;

    #[test]
    fn box_survives_a_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("box.obj");
        let m = box_mesh(&Vec3::new(0.1, 0.2, 0.3));
        write_obj(&p, &m).unwrap();
        let back = read_obj(&p).unwrap();
        assert_eq!(back.triangles.len(), m.triangles.len());
        for (a, b) in back.triangles.iter().zip(&m.triangles) {
            for (i, j) in a.iter().zip(b) {
                let (i, j) = (*i as usize, *j as usize);
                assert_eq!((back.positions[i], back.uvs[i], back.normals[i]), (m.positions[j], m.uvs[j], m.normals[j]));
            }
        }
    }

    #[test]
    fn missing_uvs_and_normals() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tri.obj");
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert!(read_obj(&p).is_err());
        fs::write(&p, "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n").unwrap();
        let m = read_obj(&p).unwrap();
        assert!(m.normals.iter().all(|n| (n - Vec3::z()).norm() < 1e-12));
    }
}
