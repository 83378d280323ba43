//! Iso-surface extraction from indicator grids and topological mesh
//! checks.
//!
//! The extractor is classic table-driven marching cubes over the
//! periodic grid's interior: cells touching the first or last node
//! layer are skipped, so a field crossing the domain boundary yields an
//! open rim rather than wrap-around geometry. Vertices on shared cell
//! edges are indexed once (keyed by grid edge), then a positional weld
//! pass merges coincident vertices from distinct grid edges (exact
//! node crossings) and drops any face left with a repeated index.
//!
//! Triangle winding is chosen so right-hand-rule normals point toward
//! increasing field values — outward for the indicator convention where
//! inside is negative.

mod checks;
mod tables;

pub use checks::{mesh_checks, MeshReport};

use crate::dpsr::IndicatorGrid;
use crate::geom::TriangleMesh;
use crate::{Error, Result};
use std::collections::HashMap;

/// Marching-cubes settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Field value of the extracted surface.
    pub iso_level: f64,
    /// Vertex-merge tolerance in grid-cell units.
    pub weld_epsilon: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            iso_level: 0.0,
            weld_epsilon: 1e-6,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.iso_level.is_finite() {
            return Err(Error::invalid("iso level must be finite"));
        }
        if !self.weld_epsilon.is_finite() || self.weld_epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "weld epsilon {} must be finite and positive",
                self.weld_epsilon
            )));
        }
        Ok(())
    }
}

/// Extracts the iso-surface of a scalar grid as an indexed triangle
/// mesh in world (unit-cube) coordinates.
pub fn marching_cubes(grid: &IndicatorGrid, cfg: &McConfig) -> Result<TriangleMesh> {
    cfg.validate()?;
    let r = grid.resolution();
    if r < 4 {
        return Err(Error::invalid(format!(
            "grid resolution {r} too small for surface extraction (minimum 4)"
        )));
    }
    let iso = cfg.iso_level;

    // Vertex per crossed grid edge, keyed by (base node linear index,
    // axis). The interpolation parameter is always taken from the lower
    // node toward the upper one, so every cell sharing the edge agrees
    // on the position exactly.
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let inv_r = 1.0 / r as f64;
    let mut vertex_on_edge = |node: [usize; 3],
                              axis: usize,
                              v_lo: f64,
                              v_hi: f64,
                              vertices: &mut Vec<[f64; 3]>|
     -> u32 {
        let linear = node[0] + r * (node[1] + r * node[2]);
        if let Some(&id) = edge_vertex.get(&(linear, axis as u8)) {
            return id;
        }
        let dv = v_hi - v_lo;
        let t = if dv.abs() < f64::EPSILON * (v_lo.abs() + v_hi.abs() + 1.0) {
            0.5
        } else {
            (iso - v_lo) / dv
        };
        let mut pos = [
            node[0] as f64 * inv_r,
            node[1] as f64 * inv_r,
            node[2] as f64 * inv_r,
        ];
        pos[axis] += t * inv_r;
        let id = vertices.len() as u32;
        vertices.push(pos);
        edge_vertex.insert((linear, axis as u8), id);
        id
    };

    // Interior cells only: base index 0 touches the first node layer and
    // base index r−2 touches the last, so both are skipped.
    for cz in 1..r - 2 {
        for cy in 1..r - 2 {
            for cx in 1..r - 2 {
                let mut corner_values = [0.0; 8];
                for (ci, off) in tables::CORNER_OFFSETS.iter().enumerate() {
                    corner_values[ci] = grid.at(cx + off[0], cy + off[1], cz + off[2]);
                }
                let mut case = 0usize;
                for (ci, &v) in corner_values.iter().enumerate() {
                    if v < iso {
                        case |= 1 << ci;
                    }
                }
                if tables::EDGE_TABLE[case] == 0 {
                    continue;
                }

                let mut cell_edge_vertex = [u32::MAX; 12];
                for (e, pair) in tables::EDGE_CORNERS.iter().enumerate() {
                    if tables::EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (pair[0], pair[1]);
                    let (oa, ob) = (tables::CORNER_OFFSETS[a], tables::CORNER_OFFSETS[b]);
                    let axis = (0..3).find(|&d| oa[d] != ob[d]).expect("edge spans an axis");
                    // Canonical lower corner along the axis.
                    let (lo, hi) = if oa[axis] < ob[axis] { (a, b) } else { (b, a) };
                    let lo_off = tables::CORNER_OFFSETS[lo];
                    let node = [cx + lo_off[0], cy + lo_off[1], cz + lo_off[2]];
                    cell_edge_vertex[e] = vertex_on_edge(
                        node,
                        axis,
                        corner_values[lo],
                        corner_values[hi],
                        &mut vertices,
                    );
                }

                let row = &tables::TRIANGLE_TABLE[case];
                let mut i = 0;
                while i + 2 < row.len() && row[i] >= 0 {
                    let v0 = cell_edge_vertex[row[i] as usize];
                    let v1 = cell_edge_vertex[row[i + 1] as usize];
                    let v2 = cell_edge_vertex[row[i + 2] as usize];
                    // Reversed relative to the table so normals face
                    // increasing field values.
                    faces.push([v0, v2, v1]);
                    i += 3;
                }
            }
        }
    }

    let (vertices, faces) = weld(vertices, faces, cfg.weld_epsilon * inv_r);
    TriangleMesh::new(vertices, faces)
}

/// Merges vertices closer than `threshold` (world units), remaps faces,
/// drops faces with repeated indices, and compacts unused vertices.
fn weld(
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    threshold: f64,
) -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let inv_t = 1.0 / threshold;
    let bucket_of = |p: [f64; 3]| -> [i64; 3] {
        [
            (p[0] * inv_t).floor() as i64,
            (p[1] * inv_t).floor() as i64,
            (p[2] * inv_t).floor() as i64,
        ]
    };
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut representative: Vec<u32> = Vec::with_capacity(vertices.len());
    let t2 = threshold * threshold;

    'next: for (i, &p) in vertices.iter().enumerate() {
        let b = bucket_of(p);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let key = [b[0] + dx, b[1] + dy, b[2] + dz];
                    if let Some(ids) = buckets.get(&key) {
                        for &j in ids {
                            let q = vertices[j as usize];
                            let d2 = (p[0] - q[0]).powi(2)
                                + (p[1] - q[1]).powi(2)
                                + (p[2] - q[2]).powi(2);
                            if d2 <= t2 {
                                representative.push(j);
                                continue 'next;
                            }
                        }
                    }
                }
            }
        }
        buckets.entry(b).or_default().push(i as u32);
        representative.push(i as u32);
    }

    let mut remapped: Vec<[u32; 3]> = Vec::with_capacity(faces.len());
    for f in faces {
        let g = [
            representative[f[0] as usize],
            representative[f[1] as usize],
            representative[f[2] as usize],
        ];
        if g[0] != g[1] && g[1] != g[2] && g[0] != g[2] {
            remapped.push(g);
        }
    }

    // Compact to the vertices still referenced.
    let mut new_id = vec![u32::MAX; vertices.len()];
    let mut out_vertices = Vec::new();
    let mut out_faces = Vec::with_capacity(remapped.len());
    for f in remapped {
        let mut g = [0u32; 3];
        for (slot, &old) in g.iter_mut().zip(&f) {
            if new_id[old as usize] == u32::MAX {
                new_id[old as usize] = out_vertices.len() as u32;
                out_vertices.push(vertices[old as usize]);
            }
            *slot = new_id[old as usize];
        }
        out_faces.push(g);
    }
    (out_vertices, out_faces)
}
