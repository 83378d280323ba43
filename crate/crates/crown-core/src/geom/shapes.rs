//! Closed primitive meshes: icosphere, superellipsoid, axis-aligned box.
//! All are wound counter-clockwise seen from outside (positive enclosed
//! volume), so sampled normals point outward.

use std::collections::HashMap;

use crate::geom::{vec3, TriangleMesh};

/// Icosphere: regular icosahedron subdivided `subdivisions` times with
/// every vertex projected onto the sphere. Subdivision level 4 keeps
/// every surface point within ~2.5e-4·radius of the sphere and face
/// normals within ~0.04 rad of radial.
pub fn icosphere(center: [f64; 3], radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&v| vec3::normalized(v, 1e-12).unwrap())
    .collect();

    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = vec3::scale(
                        vec3::add(vertices[a as usize], vertices[b as usize]),
                        0.5,
                    );
                    vertices.push(vec3::normalized(m, 1e-12).unwrap());
                    (vertices.len() - 1) as u32
                });
            }
            next_faces.push([f[0], mid[0], mid[2]]);
            next_faces.push([f[1], mid[1], mid[0]]);
            next_faces.push([f[2], mid[2], mid[1]]);
            next_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = next_faces;
    }

    for v in &mut vertices {
        *v = vec3::add(vec3::scale(*v, radius), center);
    }
    TriangleMesh { vertices, faces }
}

/// sign(x)·|x|^e, the superellipse coordinate function.
fn spow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

/// Superellipsoid centered at `center` with semi-axes `semi` and shape
/// exponents `exp = [north-south, east-west]` (1 gives an ellipsoid,
/// smaller values square the profile off). Tessellated on a lat/lon grid
/// with welded poles, so the mesh is closed.
pub fn superellipsoid(
    center: [f64; 3],
    semi: [f64; 3],
    exp: [f64; 2],
    n_lat: usize,
    n_lon: usize,
) -> TriangleMesh {
    assert!(n_lat >= 2 && n_lon >= 3, "tessellation too coarse");
    let (e1, e2) = (exp[0], exp[1]);
    let mut vertices = Vec::with_capacity((n_lat - 1) * n_lon + 2);
    vertices.push(vec3::add(center, [0.0, 0.0, -semi[2]])); // south pole
    for i in 1..n_lat {
        let theta = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n_lat as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        for j in 0..n_lon {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_lon as f64;
            let (cp, sp) = (phi.cos(), phi.sin());
            vertices.push(vec3::add(
                center,
                [
                    semi[0] * spow(ct, e1) * spow(cp, e2),
                    semi[1] * spow(ct, e1) * spow(sp, e2),
                    semi[2] * spow(st, e1),
                ],
            ));
        }
    }
    vertices.push(vec3::add(center, [0.0, 0.0, semi[2]])); // north pole

    let ring = |i: usize, j: usize| -> u32 { (1 + (i - 1) * n_lon + (j % n_lon)) as u32 };
    let south = 0u32;
    let north = (vertices.len() - 1) as u32;
    let mut faces = Vec::new();
    // South cap: ring 1 seen from below must wind clockwise in xy.
    for j in 0..n_lon {
        faces.push([south, ring(1, j + 1), ring(1, j)]);
    }
    // Side quads.
    for i in 1..n_lat - 1 {
        for j in 0..n_lon {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    // North cap.
    for j in 0..n_lon {
        faces.push([north, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)]);
    }
    TriangleMesh { vertices, faces }
}

/// Axis-aligned box spanning `lo..hi`, 12 outward-wound triangles.
pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> TriangleMesh {
    let v = |x: usize, y: usize, z: usize| -> [f64; 3] {
        [
            if x == 0 { lo[0] } else { hi[0] },
            if y == 0 { lo[1] } else { hi[1] },
            if z == 0 { lo[2] } else { hi[2] },
        ]
    };
    let vertices = vec![
        v(0, 0, 0),
        v(1, 0, 0),
        v(1, 1, 0),
        v(0, 1, 0),
        v(0, 0, 1),
        v(1, 0, 1),
        v(1, 1, 1),
        v(0, 1, 1),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom (−z)
        [4, 5, 6],
        [4, 6, 7], // top (+z)
        [0, 1, 5],
        [0, 5, 4], // front (−y)
        [2, 3, 7],
        [2, 7, 6], // back (+y)
        [0, 4, 7],
        [0, 7, 3], // left (−x)
        [1, 2, 6],
        [1, 6, 5], // right (+x)
    ];
    TriangleMesh { vertices, faces }
}

/// Signed enclosed volume via the divergence theorem; positive for
/// closed meshes wound counter-clockwise from outside.
pub fn signed_volume(mesh: &TriangleMesh) -> f64 {
    mesh.faces
        .iter()
        .map(|f| {
            let a = mesh.vertices[f[0] as usize];
            let b = mesh.vertices[f[1] as usize];
            let c = mesh.vertices[f[2] as usize];
            vec3::dot(a, vec3::cross(b, c)) / 6.0
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_vertices_lie_on_sphere() {
        let mesh = icosphere([0.5; 3], 0.3, 3);
        for v in &mesh.vertices {
            assert!((vec3::dist(*v, [0.5; 3]) - 0.3).abs() < 1e-12);
        }
        mesh.validate().unwrap();
    }

    #[test]
    fn icosphere_volume_is_positive_and_near_sphere() {
        let mesh = icosphere([0.0; 3], 1.0, 4);
        let vol = signed_volume(&mesh);
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(vol > 0.0, "winding must be outward");
        assert!((vol - exact).abs() / exact < 1e-2);
    }

    #[test]
    fn icosphere_face_count_grows_fourfold() {
        assert_eq!(icosphere([0.0; 3], 1.0, 0).faces.len(), 20);
        assert_eq!(icosphere([0.0; 3], 1.0, 2).faces.len(), 320);
    }

    #[test]
    fn superellipsoid_with_unit_exponents_is_ellipsoid() {
        let mesh = superellipsoid([0.0; 3], [2.0, 1.0, 0.5], [1.0, 1.0], 16, 24);
        mesh.validate().unwrap();
        for v in &mesh.vertices {
            let r = (v[0] / 2.0).powi(2) + v[1].powi(2) + (v[2] / 0.5).powi(2);
            assert!((r - 1.0).abs() < 1e-9, "vertex off the ellipsoid: {r}");
        }
        let vol = signed_volume(&mesh);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 2.0 * 1.0 * 0.5;
        assert!(vol > 0.0);
        assert!((vol - exact).abs() / exact < 0.05);
    }

    #[test]
    fn box_volume_matches() {
        let mesh = box_mesh([0.0, 0.0, 0.0], [2.0, 3.0, 4.0]);
        mesh.validate().unwrap();
        assert!((signed_volume(&mesh) - 24.0).abs() < 1e-12);
    }
}
