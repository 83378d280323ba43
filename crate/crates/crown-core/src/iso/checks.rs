//! Topological and geometric mesh diagnostics.

use crate::geom::{vec3, TriangleMesh};
use std::collections::HashMap;

/// Summary of mesh topology and quality.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshReport {
    /// Every edge is shared by exactly two faces (false for an empty
    /// mesh).
    pub closed: bool,
    /// No edge borders more than two faces and every vertex's incident
    /// faces form a single fan (cycle or path).
    pub manifold: bool,
    /// Connected components among vertices referenced by faces.
    pub n_components: usize,
    /// `V − E + F` over all mesh vertices (2 per closed genus-0
    /// component).
    pub euler_characteristic: i64,
    /// Smallest face area; 0 for an empty mesh.
    pub min_triangle_area: f64,
}

impl MeshReport {
    pub fn to_kv(&self) -> String {
        format!(
            "closed = {}\nmanifold = {}\nn_components = {}\neuler_characteristic = {}\nmin_triangle_area = {:.3e}\n",
            self.closed,
            self.manifold,
            self.n_components,
            self.euler_characteristic,
            self.min_triangle_area
        )
    }
}

pub fn mesh_checks(mesh: &TriangleMesh) -> MeshReport {
    if mesh.faces.is_empty() {
        return MeshReport {
            closed: false,
            manifold: true,
            n_components: 0,
            euler_characteristic: mesh.vertices.len() as i64,
            min_triangle_area: 0.0,
        };
    }

    // Edge sharing counts.
    let mut edge_count: HashMap<(u32, u32), u32> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            *edge_count.entry(key).or_insert(0) += 1;
        }
    }
    let closed = edge_count.values().all(|&c| c == 2);
    let edges_ok = edge_count.values().all(|&c| c <= 2);

    let manifold = edges_ok && all_vertex_links_are_fans(mesh);

    // Connected components over referenced vertices.
    let mut uf = UnionFind::new(mesh.vertices.len());
    let mut referenced = vec![false; mesh.vertices.len()];
    for f in &mesh.faces {
        for &v in f {
            referenced[v as usize] = true;
        }
        uf.union(f[0] as usize, f[1] as usize);
        uf.union(f[1] as usize, f[2] as usize);
    }
    let mut roots = std::collections::HashSet::new();
    for (v, &used) in referenced.iter().enumerate() {
        if used {
            roots.insert(uf.find(v));
        }
    }

    let euler = mesh.vertices.len() as i64 - edge_count.len() as i64 + mesh.faces.len() as i64;

    let min_area = mesh
        .faces
        .iter()
        .map(|f| {
            vec3::triangle_area(
                mesh.vertices[f[0] as usize],
                mesh.vertices[f[1] as usize],
                mesh.vertices[f[2] as usize],
            )
        })
        .fold(f64::INFINITY, f64::min);

    MeshReport {
        closed,
        manifold,
        n_components: roots.len(),
        euler_characteristic: euler,
        min_triangle_area: min_area,
    }
}

/// A vertex is manifold when the opposite edges of its incident faces
/// (its link) form one simple cycle or one simple path.
fn all_vertex_links_are_fans(mesh: &TriangleMesh) -> bool {
    let mut link_edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); mesh.vertices.len()];
    for f in &mesh.faces {
        link_edges[f[0] as usize].push((f[1], f[2]));
        link_edges[f[1] as usize].push((f[2], f[0]));
        link_edges[f[2] as usize].push((f[0], f[1]));
    }

    for edges in &link_edges {
        if edges.is_empty() {
            continue; // isolated vertex: vacuously fine
        }
        // Degree of each link node.
        let mut degree: HashMap<u32, u32> = HashMap::new();
        for &(a, b) in edges {
            *degree.entry(a).or_insert(0) += 1;
            *degree.entry(b).or_insert(0) += 1;
        }
        if degree.values().any(|&d| d > 2) {
            return false;
        }
        let odd = degree.values().filter(|&&d| d == 1).count();
        if odd != 0 && odd != 2 {
            return false;
        }
        // Connectivity: a single fan has exactly one component, and a
        // graph whose nodes have degree ≤ 2 is one path/cycle iff
        // #edges == #nodes − (1 if path else 0).
        let nodes = degree.len();
        let expected_edges = if odd == 2 { nodes - 1 } else { nodes };
        if edges.len() != expected_edges {
            return false;
        }
    }
    true
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes::{box_mesh, icosphere};
    use crate::geom::TriangleMesh;

    #[test]
    fn icosphere_is_closed_manifold_euler_two() {
        let m = icosphere([0.5, 0.5, 0.5], 0.3, 2);
        let r = mesh_checks(&m);
        assert!(r.closed && r.manifold);
        assert_eq!(r.n_components, 1);
        assert_eq!(r.euler_characteristic, 2);
        assert!(r.min_triangle_area > 0.0);
    }

    #[test]
    fn two_disjoint_boxes_count_two_components() {
        let mut m = box_mesh([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        m.concat(&box_mesh([2.0, 0.0, 0.0], [3.0, 1.0, 1.0]));
        let r = mesh_checks(&m);
        assert!(r.closed && r.manifold);
        assert_eq!(r.n_components, 2);
        assert_eq!(r.euler_characteristic, 4);
    }

    #[test]
    fn open_fan_is_manifold_but_not_closed() {
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let r = mesh_checks(&m);
        assert!(!r.closed);
        assert!(r.manifold);
        assert_eq!(r.n_components, 1);
        assert_eq!(r.euler_characteristic, 4 - 5 + 2);
    }

    #[test]
    fn edge_shared_by_three_faces_is_not_manifold() {
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, 1.0, 0.0],
                [0.5, -1.0, 0.0],
                [0.5, 0.0, 1.0],
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        )
        .unwrap();
        let r = mesh_checks(&m);
        assert!(!r.manifold);
        assert!(!r.closed);
    }

    #[test]
    fn bowtie_vertex_is_not_manifold() {
        // Two triangles meeting only at vertex 0: the link is two
        // disconnected segments.
        let m = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [-1.0, 0.0, 0.0],
                [-1.0, -1.0, 0.0],
            ],
            vec![[0, 1, 2], [0, 3, 4]],
        )
        .unwrap();
        let r = mesh_checks(&m);
        assert!(!r.manifold);
        assert_eq!(r.n_components, 1);
    }

    #[test]
    fn empty_mesh_report() {
        let m = TriangleMesh::new(vec![], vec![]).unwrap();
        let r = mesh_checks(&m);
        assert!(!r.closed);
        assert!(r.manifold);
        assert_eq!(r.n_components, 0);
        assert_eq!(r.min_triangle_area, 0.0);
    }
}
