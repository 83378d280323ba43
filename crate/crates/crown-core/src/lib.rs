//! Point-to-mesh crown completion toolkit.
//!
//! Completes a partial point cloud (a prepared tooth site plus its
//! neighboring and opposing geometry) into a watertight crown mesh. The
//! pipeline is differentiable end to end:
//!
//! 1. [`net`] — a small set-transformer completion network predicts an
//!    oriented dense point cloud from the 10,240-point context,
//! 2. [`dpsr`] — differentiable Poisson surface reconstruction splats the
//!    oriented points onto a periodic grid and solves for an indicator
//!    function spectrally, with hand-written adjoints,
//! 3. [`iso`] — marching cubes extracts the zero level set as an indexed
//!    triangle mesh.
//!
//! [`metrics`] provides Chamfer distances, F-score, and grid MSE;
//! [`loss`] composes the training objective; [`train`] implements AdamW
//! training with bit-exact checkpoint resume and the ablation driver;
//! [`data`] generates the synthetic tooth-row dataset. Everything is
//! deterministic given a seed, on every platform, via the counter-based
//! generator in [`geom::rng`].
//!
//! All geometry lives in the unit cube `[0,1]^3` with a 5% margin; grids
//! are periodic over that cube. Computation is `f64` throughout; file
//! formats store `f32`.

pub mod data;
pub mod dpsr;
pub mod geom;
pub mod iso;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod train;

mod error;

pub use error::{Error, Result};
