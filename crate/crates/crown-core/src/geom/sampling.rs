//! Point sampling: area-uniform surface sampling of triangle meshes and
//! farthest-point subsampling of clouds.

use crate::geom::rng::Rng;
use crate::geom::{vec3, OrientedPointCloud, PointCloud, TriangleMesh};
use crate::{Error, Result};

/// Draws `n` points uniformly by area from the surface of `mesh`, each
/// carrying the unit normal of the face it was drawn from (faces are
/// wound consistently, so normals point outward for closed shapes).
///
/// Faces are selected by binary search on the cumulative area table and
/// positions are uniform barycentric draws, so the draw sequence is a
/// pure function of the rng state. Zero-area faces carry no sampling
/// weight and are never selected.
pub fn sample_mesh_surface(
    mesh: &TriangleMesh,
    n: usize,
    rng: &mut Rng,
) -> Result<OrientedPointCloud> {
    if n == 0 {
        return Err(Error::invalid("cannot sample 0 points"));
    }
    mesh.validate()?;

    // Cumulative area table; normals cached per face.
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut normals = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        let a = mesh.vertices[f[0] as usize];
        let b = mesh.vertices[f[1] as usize];
        let c = mesh.vertices[f[2] as usize];
        let raw = vec3::face_normal_raw(a, b, c);
        let double_area = vec3::norm(raw);
        total += 0.5 * double_area;
        cumulative.push(total);
        normals.push(if double_area > 0.0 {
            vec3::scale(raw, 1.0 / double_area)
        } else {
            [0.0; 3]
        });
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("degenerate mesh: total surface area is zero"));
    }

    let mut points = Vec::with_capacity(n);
    let mut out_normals = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.next_f64() * total;
        let face = cumulative.partition_point(|&c| c <= target).min(mesh.faces.len() - 1);
        let f = mesh.faces[face];
        let a = mesh.vertices[f[0] as usize];
        let b = mesh.vertices[f[1] as usize];
        let c = mesh.vertices[f[2] as usize];
        let mut u = rng.next_f64();
        let mut v = rng.next_f64();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(vec3::add(
            a,
            vec3::add(vec3::scale(vec3::sub(b, a), u), vec3::scale(vec3::sub(c, a), v)),
        ));
        out_normals.push(normals[face]);
    }
    Ok(OrientedPointCloud {
        points,
        normals: out_normals,
    })
}

/// Farthest-point subsampling: picks an rng-chosen start, then repeatedly
/// the point farthest from the chosen set. Distance ties break toward
/// the lower index, so the result is deterministic for a fixed rng state
/// even on degenerate inputs. Returns the selected points and their
/// indices into `cloud`.
pub fn fps_subsample(
    cloud: &PointCloud,
    m: usize,
    rng: &mut Rng,
) -> Result<(PointCloud, Vec<usize>)> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("cannot subsample an empty cloud"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "subsample size {m} out of range 1..={n}"
        )));
    }

    let mut chosen = vec![false; n];
    let mut indices = Vec::with_capacity(m);
    let start = rng.below(n);
    chosen[start] = true;
    indices.push(start);

    // min_d2[i] = squared distance from point i to the chosen set.
    let mut min_d2: Vec<f64> = cloud
        .points
        .iter()
        .map(|&p| vec3::dist_sq(p, cloud.points[start]))
        .collect();

    while indices.len() < m {
        let mut best = usize::MAX;
        let mut best_d2 = -1.0;
        for i in 0..n {
            if !chosen[i] && min_d2[i] > best_d2 {
                best = i;
                best_d2 = min_d2[i];
            }
        }
        chosen[best] = true;
        indices.push(best);
        let p = cloud.points[best];
        for i in 0..n {
            let d2 = vec3::dist_sq(cloud.points[i], p);
            if d2 < min_d2[i] {
                min_d2[i] = d2;
            }
        }
    }

    let points = indices.iter().map(|&i| cloud.points[i]).collect();
    Ok((PointCloud::new(points), indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::shapes;

    fn unit_cube_corners() -> PointCloud {
        let mut pts = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn fps_second_pick_is_opposite_corner() {
        let cloud = unit_cube_corners();
        let mut rng = Rng::new(0);
        let (_, idx) = fps_subsample(&cloud, 8, &mut rng).unwrap();
        let first = cloud.points[idx[0]];
        let second = cloud.points[idx[1]];
        // The farthest point from any corner of a cube is the opposite corner.
        assert!((vec3::dist(first, second) - 3f64.sqrt()).abs() < 1e-12);
        for d in 0..3 {
            assert_eq!(second[d], 1.0 - first[d]);
        }
    }

    #[test]
    fn fps_full_size_is_a_permutation() {
        let cloud = unit_cube_corners();
        let mut rng = Rng::new(3);
        let (_, mut idx) = fps_subsample(&cloud, 8, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn fps_handles_identical_points_without_duplicates() {
        let cloud = PointCloud::new(vec![[0.25; 3]; 16]);
        let mut rng = Rng::new(1);
        let (_, mut idx) = fps_subsample(&cloud, 16, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_bad_sizes() {
        let cloud = unit_cube_corners();
        assert!(fps_subsample(&cloud, 0, &mut Rng::new(0)).is_err());
        assert!(fps_subsample(&cloud, 9, &mut Rng::new(0)).is_err());
        assert!(fps_subsample(&PointCloud::default(), 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn fps_spreads_better_than_uniform_picks() {
        // Min pairwise distance of 64 FPS picks should beat 64 uniform
        // random picks on every seed: FPS maximizes exactly that spread.
        let mut gen = Rng::new(77);
        let pts: Vec<[f64; 3]> = (0..1000)
            .map(|_| [gen.next_f64(), gen.next_f64(), gen.next_f64()])
            .collect();
        let cloud = PointCloud::new(pts.clone());

        let min_pairwise = |sel: &[[f64; 3]]| {
            let mut best = f64::INFINITY;
            for i in 0..sel.len() {
                for j in i + 1..sel.len() {
                    best = best.min(vec3::dist(sel[i], sel[j]));
                }
            }
            best
        };

        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let (fps_pts, _) = fps_subsample(&cloud, 64, &mut rng).unwrap();
            let mut rng = Rng::new(seed);
            let uniform: Vec<[f64; 3]> = (0..64).map(|_| pts[rng.below(1000)]).collect();
            assert!(min_pairwise(&fps_pts.points) >= min_pairwise(&uniform));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let mesh = shapes::icosphere([0.5; 3], 0.3, 3);
        let a = sample_mesh_surface(&mesh, 500, &mut Rng::new(9)).unwrap();
        let b = sample_mesh_surface(&mesh, 500, &mut Rng::new(9)).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.normals, b.normals);
        a.validate().unwrap();
        for (p, n) in a.points.iter().zip(&a.normals) {
            let r = vec3::dist(*p, [0.5; 3]);
            assert!((r - 0.3).abs() < 5e-3, "sample off the sphere: r = {r}");
            let radial = vec3::scale(vec3::sub(*p, [0.5; 3]), 1.0 / r);
            assert!(vec3::dot(*n, radial) > 0.9);
        }
    }

    #[test]
    fn sampling_rejects_degenerate_meshes() {
        // All three vertices collinear: zero total area.
        let mesh = TriangleMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_mesh_surface(&mesh, 10, &mut Rng::new(0)).is_err());
        assert!(sample_mesh_surface(&mesh, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn sample_counts_match_face_areas() {
        // Chi-square goodness of fit of per-face sample counts against
        // area proportions on a two-face mesh with a 3:1 area ratio.
        let mesh = TriangleMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [3.0, 2.0, 0.0],
                [4.0, 0.0, 0.0],
            ],
            vec![[0, 1, 2], [1, 3, 4]],
        )
        .unwrap();
        let areas = [3.0, 1.0];
        let total: f64 = areas.iter().sum();
        let n = 100_000usize;
        let cloud = sample_mesh_surface(&mesh, n, &mut Rng::new(123)).unwrap();
        // Assign each sample back to its face by normal-plane membership:
        // both faces lie in z=0, so use x/y membership via barycentric
        // test against face 0.
        let mut counts = [0usize; 2];
        for p in &cloud.points {
            // Face 0 occupies x/3 + y/2 <= 1 within its triangle.
            if p[0] / 3.0 + p[1] / 2.0 <= 1.0 + 1e-9 {
                counts[0] += 1;
            } else {
                counts[1] += 1;
            }
        }
        let mut chi2 = 0.0;
        for (i, &c) in counts.iter().enumerate() {
            let expected = n as f64 * areas[i] / total;
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 1 degree of freedom; p > 0.001 means chi2 below the 0.999
        // quantile.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let dist = ChiSquared::new(1.0).unwrap();
        let p_value = 1.0 - dist.cdf(chi2);
        assert!(p_value > 0.001, "chi2 = {chi2}, p = {p_value}");
    }
}
