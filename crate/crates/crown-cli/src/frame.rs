//! The reconstruction grid lives on the unit cell, but command inputs
//! may arrive in any metric frame. Geometry already inside [0,1]³
//! passes through untouched; anything else is scaled uniformly into
//! the centered [0.1, 0.9]³ box, and results are mapped back.

use crown_core::geom::TriangleMesh;

const BOX_LO: f64 = 0.1;
const BOX_SPAN: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    scale: f64,
    shift: [f64; 3],
}

impl Frame {
    pub fn identity() -> Frame {
        Frame { scale: 1.0, shift: [0.0; 3] }
    }

    pub fn is_identity(&self) -> bool {
        *self == Frame::identity()
    }

    /// Identity when every point is already inside the unit cube;
    /// otherwise a uniform scale-and-shift into the working box,
    /// centered per axis.
    pub fn fit(points: &[[f64; 3]]) -> Frame {
        let inside = points
            .iter()
            .all(|p| p.iter().all(|&c| (0.0..=1.0).contains(&c)));
        if inside {
            return Frame::identity();
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-12);
        let scale = BOX_SPAN / extent;
        let mut shift = [0.0; 3];
        for a in 0..3 {
            shift[a] = BOX_LO + 0.5 * (BOX_SPAN - scale * (hi[a] - lo[a])) - scale * lo[a];
        }
        Frame { scale, shift }
    }

    pub fn map_point(&self, p: [f64; 3]) -> [f64; 3] {
        [
            self.scale * p[0] + self.shift[0],
            self.scale * p[1] + self.shift[1],
            self.scale * p[2] + self.shift[2],
        ]
    }

    pub fn unmap_point(&self, u: [f64; 3]) -> [f64; 3] {
        [
            (u[0] - self.shift[0]) / self.scale,
            (u[1] - self.shift[1]) / self.scale,
            (u[2] - self.shift[2]) / self.scale,
        ]
    }

    pub fn map_points(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.map_point(p)).collect()
    }

    pub fn unmap_points(&self, points: &[[f64; 3]]) -> Vec<[f64; 3]> {
        points.iter().map(|&p| self.unmap_point(p)).collect()
    }

    pub fn unmap_mesh(&self, mesh: &mut TriangleMesh) {
        for v in &mut mesh.vertices {
            *v = self.unmap_point(*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cube_points_pass_through_unchanged() {
        let pts = vec![[0.0, 0.5, 1.0], [0.25, 0.75, 0.5]];
        let frame = Frame::fit(&pts);
        assert!(frame.is_identity());
        assert_eq!(frame.map_point(pts[0]), pts[0]);
    }

    #[test]
    fn outside_points_land_centered_in_the_working_box() {
        let pts = vec![[-3.0, 10.0, 0.0], [5.0, 12.0, 1.0]];
        let frame = Frame::fit(&pts);
        let mapped = frame.map_points(&pts);
        for p in &mapped {
            for &c in p {
                assert!((BOX_LO - 1e-12..=BOX_LO + BOX_SPAN + 1e-12).contains(&c), "{c}");
            }
        }
        // Longest axis spans the full box and every axis is centered.
        assert!((mapped[1][0] - mapped[0][0] - BOX_SPAN).abs() < 1e-12);
        assert!((mapped[0][1] + mapped[1][1] - 1.0).abs() < 1e-12);
        // Round trip is exact to rounding.
        for (orig, m) in pts.iter().zip(&mapped) {
            let back = frame.unmap_point(*m);
            for a in 0..3 {
                assert!((back[a] - orig[a]).abs() < 1e-9);
            }
        }
    }
}
