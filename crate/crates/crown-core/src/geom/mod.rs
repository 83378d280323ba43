//! Geometric base layer: point/mesh types, deterministic RNG, surface
//! sampling, primitive shapes, and file I/O.

pub mod io;
pub mod rng;
pub mod sampling;
pub mod shapes;
pub mod vec3;

mod types;

pub use types::{OrientedPointCloud, PointCloud, TriangleMesh};
