//! Periodic scalar/vector grids over the unit cube and the shared
//! trilinear stencil used by splatting and sampling.
//!
//! Grid node `(x, y, z)` sits at world position `(x/r, y/r, z/r)`; data
//! is stored x-fastest (`idx = x + r·(y + r·z)`), matching the on-disk
//! grid format. The domain is periodic: node `r` wraps to node `0`.

use crate::{Error, Result};

/// Scalar field on an `r³` periodic grid (the Poisson indicator lives
/// here). Values are `f64` in memory and `f32` on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorGrid {
    resolution: usize,
    pub data: Vec<f64>,
}

impl IndicatorGrid {
    pub fn zeros(resolution: usize) -> Self {
        IndicatorGrid {
            resolution,
            data: vec![0.0; resolution * resolution * resolution],
        }
    }

    pub fn from_data(resolution: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != resolution * resolution * resolution {
            return Err(Error::invalid(format!(
                "grid data length {} does not match resolution {resolution}",
                data.len()
            )));
        }
        Ok(IndicatorGrid { resolution, data })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.idx(x, y, z)]
    }

    /// Periodic trilinear interpolation at a domain point in `[0,1)³`.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> f64 {
        let st = Stencil::new(self.resolution, p);
        let mut acc = 0.0;
        st.visit(|idx, w| acc += w * self.data[idx]);
        acc
    }

    /// Gradient of [`Self::trilinear_sample`] with respect to the sample
    /// position (undefined on cell boundaries, where the interpolant has
    /// kinks).
    pub fn trilinear_grad(&self, p: [f64; 3]) -> [f64; 3] {
        let st = Stencil::new(self.resolution, p);
        let mut grad = [0.0; 3];
        st.visit_grad(|idx, dw| {
            for d in 0..3 {
                grad[d] += dw[d] * self.data[idx];
            }
        });
        grad
    }
}

/// Three-component vector field on an `r³` periodic grid, stored as one
/// scalar grid per component so each can be transformed independently.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    resolution: usize,
    pub channels: [Vec<f64>; 3],
}

impl VectorGrid {
    pub fn zeros(resolution: usize) -> Self {
        let n = resolution * resolution * resolution;
        VectorGrid {
            resolution,
            channels: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_channels(resolution: usize, channels: [Vec<f64>; 3]) -> Result<Self> {
        let n = resolution * resolution * resolution;
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::invalid(format!(
                "vector grid channel length does not match resolution {resolution}"
            )));
        }
        Ok(VectorGrid {
            resolution,
            channels,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Sum of each component over all cells (splat conserves these).
    pub fn channel_sums(&self) -> [f64; 3] {
        [
            self.channels[0].iter().sum(),
            self.channels[1].iter().sum(),
            self.channels[2].iter().sum(),
        ]
    }
}

/// Rejects non-finite or out-of-domain points; a coordinate of exactly
/// 1.0 wraps to 0.0 (the domain is periodic).
pub fn wrap_point(index: usize, p: [f64; 3]) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for d in 0..3 {
        let c = p[d];
        if !c.is_finite() {
            return Err(Error::invalid(format!("point {index} is not finite")));
        }
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::invalid(format!(
                "point {index} out of domain: coordinate {c} outside [0, 1]"
            )));
        }
        out[d] = if c == 1.0 { 0.0 } else { c };
    }
    Ok(out)
}

/// The eight-corner trilinear stencil of a point: wrapped node indices,
/// weights, and weight gradients. Weights form a partition of unity, so
/// splatting conserves mass exactly up to rounding.
pub struct Stencil {
    resolution: usize,
    /// Wrapped node index per dimension: `[lower, upper]`.
    nodes: [[usize; 2]; 3],
    /// Fractional position within the cell per dimension.
    frac: [f64; 3],
}

impl Stencil {
    /// `p` must be finite and in `[0,1)` per coordinate (see
    /// [`wrap_point`]).
    pub fn new(resolution: usize, p: [f64; 3]) -> Self {
        let r = resolution;
        let mut nodes = [[0usize; 2]; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let g = p[d] * r as f64;
            let base = g.floor() as usize;
            let base = base.min(r - 1); // guards g == r from rounding
            nodes[d] = [base, (base + 1) % r];
            frac[d] = g - base as f64;
        }
        Stencil {
            resolution,
            nodes,
            frac,
        }
    }

    /// Calls `f(linear_index, weight)` for each of the 8 corners.
    #[inline]
    pub fn visit<F: FnMut(usize, f64)>(&self, mut f: F) {
        let r = self.resolution;
        for cz in 0..2 {
            let wz = if cz == 1 { self.frac[2] } else { 1.0 - self.frac[2] };
            let z = self.nodes[2][cz];
            for cy in 0..2 {
                let wy = if cy == 1 { self.frac[1] } else { 1.0 - self.frac[1] };
                let y = self.nodes[1][cy];
                for cx in 0..2 {
                    let wx = if cx == 1 { self.frac[0] } else { 1.0 - self.frac[0] };
                    let x = self.nodes[0][cx];
                    f(x + r * (y + r * z), wx * wy * wz);
                }
            }
        }
    }

    /// Calls `f(linear_index, dweight/dp)` for each corner; the gradient
    /// is with respect to the domain-unit position (the chain rule factor
    /// `r` from cell units is included).
    #[inline]
    pub fn visit_grad<F: FnMut(usize, [f64; 3])>(&self, mut f: F) {
        let r = self.resolution;
        let rf = r as f64;
        for cz in 0..2 {
            let (wz, dz) = if cz == 1 {
                (self.frac[2], 1.0)
            } else {
                (1.0 - self.frac[2], -1.0)
            };
            let z = self.nodes[2][cz];
            for cy in 0..2 {
                let (wy, dy) = if cy == 1 {
                    (self.frac[1], 1.0)
                } else {
                    (1.0 - self.frac[1], -1.0)
                };
                let y = self.nodes[1][cy];
                for cx in 0..2 {
                    let (wx, dx) = if cx == 1 {
                        (self.frac[0], 1.0)
                    } else {
                        (1.0 - self.frac[0], -1.0)
                    };
                    let x = self.nodes[0][cx];
                    f(
                        x + r * (y + r * z),
                        [rf * dx * wy * wz, rf * wx * dy * wz, rf * wx * wy * dz],
                    );
                }
            }
        }
    }
}
