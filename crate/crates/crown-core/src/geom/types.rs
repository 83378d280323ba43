use crate::geom::vec3;
use crate::{Error, Result};

/// Unordered set of 3D points. Coordinates are `f64` in memory; file
/// formats store `f32`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the type invariant: every coordinate finite.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !vec3::is_finite(*p) {
                return Err(Error::invalid(format!("non-finite coordinate at point {i}")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box, or `None` for an empty cloud.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        bbox_of(&self.points)
    }
}

/// Points with unit normals; `points.len() == normals.len()`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrientedPointCloud {
    pub points: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
}

impl OrientedPointCloud {
    pub fn new(points: Vec<[f64; 3]>, normals: Vec<[f64; 3]>) -> Result<Self> {
        let cloud = OrientedPointCloud { points, normals };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the type invariants: matching lengths, finite coordinates,
    /// unit normals (within 1e-6).
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.normals.len() {
            return Err(Error::invalid(format!(
                "point/normal count mismatch: {} points, {} normals",
                self.points.len(),
                self.normals.len()
            )));
        }
        for (i, (p, n)) in self.points.iter().zip(&self.normals).enumerate() {
            if !vec3::is_finite(*p) || !vec3::is_finite(*n) {
                return Err(Error::invalid(format!("non-finite value at point {i}")));
            }
            let len = vec3::norm(*n);
            if (len - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "normal {i} is not unit length (|n| = {len})"
                )));
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> PointCloud {
        PointCloud::new(self.points.clone())
    }
}

/// Indexed triangle mesh. Faces index into `vertices`; winding is
/// counter-clockwise seen from the outside for closed shapes, so
/// `(b−a)×(c−a)` points outward.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TriangleMesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Checks the type invariants: finite vertices, in-bounds indices, no
    /// degenerate faces with repeated indices.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            if !vec3::is_finite(*v) {
                return Err(Error::invalid(format!("non-finite coordinate at vertex {i}")));
            }
        }
        let n = self.vertices.len() as u32;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&idx| idx >= n) {
                return Err(Error::invalid(format!("face {i} references missing vertex")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!("face {i} repeats a vertex index")));
            }
        }
        Ok(())
    }

    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        bbox_of(&self.vertices)
    }

    /// Appends another mesh, keeping both index sets valid. The result is
    /// a multi-component mesh; no geometric union is performed.
    pub fn concat(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                vec3::triangle_area(
                    self.vertices[f[0] as usize],
                    self.vertices[f[1] as usize],
                    self.vertices[f[2] as usize],
                )
            })
            .sum()
    }
}

fn bbox_of(points: &[[f64; 3]]) -> Option<([f64; 3], [f64; 3])> {
    let first = *points.first()?;
    let mut lo = first;
    let mut hi = first;
    for p in points {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oriented_cloud_rejects_non_unit_normals() {
        let err = OrientedPointCloud::new(vec![[0.0; 3]], vec![[0.5, 0.0, 0.0]]);
        assert!(err.is_err());
        let ok = OrientedPointCloud::new(vec![[0.0; 3]], vec![[1.0, 0.0, 0.0]]);
        assert!(ok.is_ok());
    }

    #[test]
    fn oriented_cloud_rejects_length_mismatch() {
        let err = OrientedPointCloud::new(vec![[0.0; 3]; 2], vec![[1.0, 0.0, 0.0]]);
        assert!(err.is_err());
    }

    #[test]
    fn mesh_rejects_out_of_bounds_and_degenerate_faces() {
        let verts = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(TriangleMesh::new(verts.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(verts.clone(), vec![[0, 1, 1]]).is_err());
        assert!(TriangleMesh::new(verts, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn cloud_validate_rejects_nan() {
        let cloud = PointCloud::new(vec![[0.0, f64::NAN, 0.0]]);
        assert!(cloud.validate().is_err());
    }

    #[test]
    fn concat_offsets_indices() {
        let tri = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mut m = tri.clone();
        m.concat(&tri);
        assert_eq!(m.vertices.len(), 6);
        assert_eq!(m.faces[1], [3, 4, 5]);
        m.validate().unwrap();
    }

    #[test]
    fn bbox_covers_all_points() {
        let cloud = PointCloud::new(vec![[0.1, 0.9, 0.5], [0.4, 0.2, 0.7]]);
        let (lo, hi) = cloud.bbox().unwrap();
        assert_eq!(lo, [0.1, 0.2, 0.5]);
        assert_eq!(hi, [0.4, 0.9, 0.7]);
    }
}
