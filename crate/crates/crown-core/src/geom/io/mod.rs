//! File formats.
//!
//! - OBJ (`.obj`): ASCII meshes, `v x y z` and triangular `f i j k` only.
//! - PLY (`.ply`): meshes and point clouds, ASCII or binary
//!   little-endian, `float32` vertex data with optional `nx ny nz`.
//! - Grid (`.dmcg`): indicator grids, magic `DMCG`, `u32` little-endian
//!   resolution `r`, then `r³` `f32` little-endian values, x-fastest.
//!
//! All formats store `f32`; in-memory values are `f64`. Writers reject
//! non-finite values, readers name the offending line or byte offset.

mod grid;
mod obj;
mod ply;

pub use grid::{read_grid, write_grid};
pub use obj::{read_mesh_obj, write_mesh_obj};
pub use ply::{read_ply, write_ply, PlyData, PlyEncoding};

use std::path::Path;

use crate::geom::{PointCloud, TriangleMesh};
use crate::{Error, Result};

/// Reads a triangle mesh, dispatching on the file extension
/// (`.obj` or `.ply`). PLY input must carry a face element.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    match extension(path)? {
        "obj" => read_mesh_obj(path),
        "ply" => {
            let data = read_ply(path)?;
            let faces = data
                .faces
                .ok_or_else(|| Error::invalid(format!("{}: no face element", path.display())))?;
            TriangleMesh::new(data.points, faces)
        }
        other => Err(Error::invalid(format!("unsupported mesh format: .{other}"))),
    }
}

/// Writes a triangle mesh by extension; PLY output is binary
/// little-endian.
pub fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    mesh.validate()?;
    match extension(path)? {
        "obj" => write_mesh_obj(path, mesh),
        "ply" => write_ply(
            path,
            &mesh.vertices,
            None,
            Some(&mesh.faces),
            PlyEncoding::BinaryLe,
        ),
        other => Err(Error::invalid(format!("unsupported mesh format: .{other}"))),
    }
}

/// Reads a PLY point cloud; normals are returned when present. A file
/// carrying faces is a mesh, not a cloud, and is rejected.
pub fn read_cloud(path: &Path) -> Result<(PointCloud, Option<Vec<[f64; 3]>>)> {
    if extension(path)? != "ply" {
        return Err(Error::invalid("point clouds use the PLY format"));
    }
    let data = read_ply(path)?;
    if data.faces.is_some() {
        return Err(Error::invalid(format!(
            "{}: expected a point cloud, found a mesh (face element present)",
            path.display()
        )));
    }
    Ok((PointCloud::new(data.points), data.normals))
}

/// Writes a PLY point cloud, binary little-endian, with optional normals.
pub fn write_cloud(path: &Path, points: &[[f64; 3]], normals: Option<&[[f64; 3]]>) -> Result<()> {
    write_ply(path, points, normals, None, PlyEncoding::BinaryLe)
}

fn extension(path: &Path) -> Result<&str> {
    path.extension()
        .and_then(|e| e.to_str())
        .ok_or_else(|| Error::invalid(format!("{}: missing file extension", path.display())))
}
