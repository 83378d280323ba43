//! Synthetic crown-completion dataset.
//!
//! Each sample is a toy "tooth row": closed superellipsoid bumps seated
//! along a circular arc on a gum-like slab, with a mirrored opposing row
//! above. One bump is removed and becomes the ground-truth crown; a
//! flattened stub (the prepared surface) takes its place in the context.
//! The context cloud is sampled from the slab, the two bumps adjacent to
//! the removed one, the stub, the three closest opposing bumps, and the
//! opposing slab. No outer shell surface is modeled.
//!
//! Everything lives in the normalized `[0,1]³` frame with a 5% margin.
//! Point coordinates and normals are rounded to `f32` precision before
//! the ground-truth indicator grid is computed, so a sample loaded from
//! disk reproduces its stored grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dpsr::{dpsr_forward, DpsrConfig, IndicatorGrid};
use crate::geom::io;
use crate::geom::rng::Rng;
use crate::geom::sampling::sample_mesh_surface;
use crate::geom::shapes::{box_mesh, superellipsoid};
use crate::geom::vec3;
use crate::geom::{OrientedPointCloud, PointCloud, TriangleMesh};
use crate::{Error, Result};

/// Context clouds carry exactly this many points.
pub const CONTEXT_POINTS: usize = 10_240;
/// Ground-truth crowns are sampled to this many oriented points.
pub const GT_POINTS: usize = 4_096;
/// All geometry keeps this distance from the unit-cube faces.
pub const DOMAIN_MARGIN: f64 = 0.05;

/// Meta value recording how the stored grid was produced.
const GRID_SOURCE: &str = "dpsr(gt_points)";

// Frame layout. The master row sits on a slab whose top face is
// `MASTER_TOP`; the opposing row hangs from a slab whose bottom face is
// `OPPOSING_BOTTOM`. Bump centers ride the arc between `ARC_X_LO` and
// `ARC_X_HI` at base line `ARC_Y0`, bowing toward +y with curvature.
const ARC_X_LO: f64 = 0.22;
const ARC_X_HI: f64 = 0.78;
const ARC_Y0: f64 = 0.44;
const MASTER_TOP: f64 = 0.36;
const OPPOSING_BOTTOM: f64 = 0.64;
const SLAB_X: (f64, f64) = (0.16, 0.84);
const SLAB_Y: (f64, f64) = (0.35, 0.58);

/// The prepared stub keeps this fraction of the removed bump's footprint…
const STUB_LATERAL_SCALE: f64 = 0.7;
/// …and this fraction of its height.
const STUB_HEIGHT_SCALE: f64 = 0.4;

/// Superellipsoid tessellation (latitude rings × longitude steps).
const BUMP_N_LAT: usize = 24;
const BUMP_N_LON: usize = 32;

/// Augmentation limits: rotation angle, uniform scale, placement retries.
const AUG_MAX_ANGLE: f64 = 20.0 * std::f64::consts::PI / 180.0;
const AUG_SCALE: (f64, f64) = (0.9, 1.1);
const AUG_MAX_RETRIES: usize = 64;

/// Generator settings: row shape ranges, noise, split sizes, and the
/// resolution/smoothing of the stored ground-truth grids.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Bumps per row; one of the inner ones is removed, so at least 3.
    pub n_bumps: usize,
    /// Superellipsoid shape exponents (1 = ellipsoid, smaller = boxier).
    pub exponent_range: (f64, f64),
    /// Bump height above the slab top.
    pub height_range: (f64, f64),
    /// Bump lateral semi-axes (x and y drawn independently).
    pub width_range: (f64, f64),
    /// Arc curvature (reciprocal radius); 0 is a straight row.
    pub curvature_range: (f64, f64),
    /// Slab extent below the master top / above the opposing bottom.
    pub slab_thickness: f64,
    /// Half-width of the uniform jitter applied to context points.
    pub noise_sigma: f64,
    /// Base samples per split.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Augmented copies added per training base sample.
    pub aug_factor: usize,
    /// Ground-truth indicator grid resolution.
    pub grid_resolution: usize,
    /// Gaussian smoothing (in cells) used for the ground-truth grids.
    pub dpsr_sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_bumps: 6,
            exponent_range: (0.4, 0.9),
            height_range: (0.07, 0.11),
            width_range: (0.036, 0.048),
            curvature_range: (0.0, 1.2),
            slab_thickness: 0.10,
            noise_sigma: 0.002,
            train: 64,
            val: 16,
            test: 16,
            aug_factor: 10,
            grid_resolution: 32,
            dpsr_sigma: 2.0,
            seed: 7,
        }
    }
}

impl GenConfig {
    /// Checks that the ranges are orderly and that bumps of the largest
    /// admissible size still fit the frame without touching each other,
    /// the margin, or the opposing row.
    pub fn validate(&self) -> Result<()> {
        if self.n_bumps < 3 {
            return Err(Error::invalid("n_bumps must be at least 3"));
        }
        for (name, (lo, hi)) in [
            ("exponent_range", self.exponent_range),
            ("height_range", self.height_range),
            ("width_range", self.width_range),
            ("curvature_range", self.curvature_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::invalid(format!("{name} is not an ordered finite range")));
            }
        }
        if self.exponent_range.0 <= 0.0 {
            return Err(Error::invalid("shape exponents must be positive"));
        }
        if self.height_range.0 <= 0.0 || self.height_range.1 > 0.13 {
            return Err(Error::invalid("bump heights must lie in (0, 0.13]"));
        }
        if self.width_range.0 <= 0.0 || self.width_range.1 > 0.06 {
            return Err(Error::invalid("bump widths must lie in (0, 0.06]"));
        }
        if self.curvature_range.0 < 0.0 || self.curvature_range.1 > 1.5 {
            return Err(Error::invalid("curvature must lie in [0, 1.5]"));
        }
        let spacing = (ARC_X_HI - ARC_X_LO) / (self.n_bumps - 1) as f64;
        if 2.0 * self.width_range.1 > 0.95 * spacing {
            return Err(Error::invalid(format!(
                "{} bumps of width up to {} would overlap along the arc",
                self.n_bumps, self.width_range.1
            )));
        }
        if !(self.slab_thickness > 0.0 && self.slab_thickness <= 0.2) {
            return Err(Error::invalid("slab_thickness must lie in (0, 0.2]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma <= 0.005) {
            return Err(Error::invalid("noise_sigma must lie in [0, 0.005]"));
        }
        if self.grid_resolution < 4 {
            return Err(Error::invalid("grid_resolution must be at least 4"));
        }
        if !(self.dpsr_sigma >= 0.0 && self.dpsr_sigma.is_finite()) {
            return Err(Error::invalid("dpsr_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// One bump's superellipsoid parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpParams {
    pub center: [f64; 3],
    /// Semi-axes: lateral x, lateral y, height.
    pub semi: [f64; 3],
    /// Shape exponents, north-south then east-west.
    pub exponents: [f64; 2],
}

impl BumpParams {
    fn mesh(&self) -> TriangleMesh {
        superellipsoid(self.center, self.semi, self.exponents, BUMP_N_LAT, BUMP_N_LON)
    }
}

/// A full generated row pair: slabs, bumps, and their parameters.
#[derive(Debug, Clone)]
pub struct RowGeometry {
    pub master_slab: TriangleMesh,
    pub master_bumps: Vec<TriangleMesh>,
    pub master_params: Vec<BumpParams>,
    pub opposing_slab: TriangleMesh,
    pub opposing_bumps: Vec<TriangleMesh>,
    pub opposing_params: Vec<BumpParams>,
    pub curvature: f64,
    /// Everything concatenated into one mesh.
    pub full: TriangleMesh,
}

/// Generator parameters recorded next to each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    /// Seed of the base shape; augmented copies share it. Assigned by
    /// the dataset builder (0 for standalone samples).
    pub base_seed: u64,
    /// 0 for base samples, 1.. for augmented copies (builder-assigned).
    pub aug_index: usize,
    /// Index of the removed bump along the master row.
    pub removed_slot: usize,
    pub n_bumps: usize,
    pub curvature: f64,
    pub noise_sigma: f64,
    pub grid_resolution: usize,
    pub dpsr_sigma: f64,
    /// How the stored indicator grid was produced.
    pub grid_source: String,
}

impl SampleMeta {
    /// Serializes as sorted `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "aug_index={}", self.aug_index);
        let _ = writeln!(s, "base_seed={}", self.base_seed);
        let _ = writeln!(s, "curvature={}", self.curvature);
        let _ = writeln!(s, "dpsr_sigma={}", self.dpsr_sigma);
        let _ = writeln!(s, "grid_resolution={}", self.grid_resolution);
        let _ = writeln!(s, "grid_source={}", self.grid_source);
        let _ = writeln!(s, "n_bumps={}", self.n_bumps);
        let _ = writeln!(s, "noise_sigma={}", self.noise_sigma);
        let _ = writeln!(s, "removed_slot={}", self.removed_slot);
        s
    }

    /// Parses `key=value` lines; every key must appear exactly once.
    pub fn from_kv(text: &str) -> Result<SampleMeta> {
        let mut meta = SampleMeta {
            base_seed: 0,
            aug_index: 0,
            removed_slot: 0,
            n_bumps: 0,
            curvature: f64::NAN,
            noise_sigma: f64::NAN,
            grid_resolution: 0,
            dpsr_sigma: f64::NAN,
            grid_source: String::new(),
        };
        let mut seen = [false; 9];
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse_at_line(line_no, "expected key=value"))?;
            let bad = |what: &str| Error::parse_at_line(line_no, format!("bad {what}: {value}"));
            let slot = match key {
                "aug_index" => {
                    meta.aug_index = value.parse().map_err(|_| bad("aug_index"))?;
                    0
                }
                "base_seed" => {
                    meta.base_seed = value.parse().map_err(|_| bad("base_seed"))?;
                    1
                }
                "curvature" => {
                    meta.curvature = value.parse().map_err(|_| bad("curvature"))?;
                    2
                }
                "dpsr_sigma" => {
                    meta.dpsr_sigma = value.parse().map_err(|_| bad("dpsr_sigma"))?;
                    3
                }
                "grid_resolution" => {
                    meta.grid_resolution = value.parse().map_err(|_| bad("grid_resolution"))?;
                    4
                }
                "grid_source" => {
                    meta.grid_source = value.to_string();
                    5
                }
                "n_bumps" => {
                    meta.n_bumps = value.parse().map_err(|_| bad("n_bumps"))?;
                    6
                }
                "noise_sigma" => {
                    meta.noise_sigma = value.parse().map_err(|_| bad("noise_sigma"))?;
                    7
                }
                "removed_slot" => {
                    meta.removed_slot = value.parse().map_err(|_| bad("removed_slot"))?;
                    8
                }
                other => {
                    return Err(Error::parse_at_line(line_no, format!("unknown key: {other}")))
                }
            };
            if seen[slot] {
                return Err(Error::parse_at_line(line_no, format!("duplicate key: {key}")));
            }
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            const KEYS: [&str; 9] = [
                "aug_index",
                "base_seed",
                "curvature",
                "dpsr_sigma",
                "grid_resolution",
                "grid_source",
                "n_bumps",
                "noise_sigma",
                "removed_slot",
            ];
            return Err(Error::invalid(format!("meta is missing key: {}", KEYS[missing])));
        }
        Ok(meta)
    }
}

/// One training/evaluation sample: the partial context and the crown
/// ground truth in three forms (points+normals, mesh, indicator grid).
#[derive(Debug, Clone)]
pub struct ContextSample {
    pub context: PointCloud,
    pub gt_points: PointCloud,
    pub gt_normals: Vec<[f64; 3]>,
    pub gt_mesh: TriangleMesh,
    pub gt_grid: IndicatorGrid,
    pub meta: SampleMeta,
}

impl ContextSample {
    /// The ground-truth points and normals as one oriented cloud.
    pub fn gt_oriented(&self) -> Result<OrientedPointCloud> {
        OrientedPointCloud::new(self.gt_points.points.clone(), self.gt_normals.clone())
    }

    /// Checks the sample invariants: exact context budget, matching
    /// ground-truth lengths with unit normals, everything inside the
    /// unit cube, and a grid at the recorded resolution.
    pub fn validate(&self) -> Result<()> {
        self.context.validate()?;
        if self.context.len() != CONTEXT_POINTS {
            return Err(Error::invalid(format!(
                "context has {} points, expected {CONTEXT_POINTS}",
                self.context.len()
            )));
        }
        if self.gt_points.is_empty() {
            return Err(Error::invalid("empty ground-truth cloud"));
        }
        self.gt_oriented()?.validate()?;
        self.gt_mesh.validate()?;
        for p in self.context.points.iter().chain(&self.gt_points.points) {
            if p.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid("geometry leaves the unit cube"));
            }
        }
        if self.gt_grid.resolution() != self.meta.grid_resolution {
            return Err(Error::invalid(format!(
                "grid resolution {} does not match recorded {}",
                self.gt_grid.resolution(),
                self.meta.grid_resolution
            )));
        }
        Ok(())
    }
}

/// Bump centers along the arc at height `z`. Zero curvature degenerates
/// to evenly spaced collinear centers.
fn arc_centers(n: usize, curvature: f64, z: f64) -> Vec<[f64; 3]> {
    let half_span = (ARC_X_HI - ARC_X_LO) / 2.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            if curvature < 1e-9 {
                [ARC_X_LO + 2.0 * half_span * t, ARC_Y0, z]
            } else {
                let radius = 1.0 / curvature;
                let half_angle = (half_span / radius).asin();
                let a = -half_angle + 2.0 * half_angle * t;
                [0.5 + radius * a.sin(), ARC_Y0 + radius * (1.0 - a.cos()), z]
            }
        })
        .collect()
}

fn draw_bumps(cfg: &GenConfig, centers: &[[f64; 3]], rng: &mut Rng) -> Vec<BumpParams> {
    centers
        .iter()
        .map(|&center| {
            let wx = rng.uniform(cfg.width_range.0, cfg.width_range.1);
            let wy = rng.uniform(cfg.width_range.0, cfg.width_range.1);
            let h = rng.uniform(cfg.height_range.0, cfg.height_range.1);
            let e1 = rng.uniform(cfg.exponent_range.0, cfg.exponent_range.1);
            let e2 = rng.uniform(cfg.exponent_range.0, cfg.exponent_range.1);
            BumpParams { center, semi: [wx, wy, h], exponents: [e1, e2] }
        })
        .collect()
}

/// Builds a row pair: slab + bumps on the arc, and the mirrored
/// opposing slab + bumps hanging above. Deterministic in `rng`.
pub fn generate_shape(cfg: &GenConfig, rng: &mut Rng) -> Result<RowGeometry> {
    cfg.validate()?;
    let curvature = rng.uniform(cfg.curvature_range.0, cfg.curvature_range.1);
    let master_params = draw_bumps(cfg, &arc_centers(cfg.n_bumps, curvature, MASTER_TOP), rng);
    let opposing_params =
        draw_bumps(cfg, &arc_centers(cfg.n_bumps, curvature, OPPOSING_BOTTOM), rng);

    let master_slab = box_mesh(
        [SLAB_X.0, SLAB_Y.0, MASTER_TOP - cfg.slab_thickness],
        [SLAB_X.1, SLAB_Y.1, MASTER_TOP],
    );
    let opposing_slab = box_mesh(
        [SLAB_X.0, SLAB_Y.0, OPPOSING_BOTTOM],
        [SLAB_X.1, SLAB_Y.1, OPPOSING_BOTTOM + cfg.slab_thickness],
    );
    let master_bumps: Vec<TriangleMesh> = master_params.iter().map(BumpParams::mesh).collect();
    let opposing_bumps: Vec<TriangleMesh> = opposing_params.iter().map(BumpParams::mesh).collect();

    let mut full = master_slab.clone();
    for b in &master_bumps {
        full.concat(b);
    }
    full.concat(&opposing_slab);
    for b in &opposing_bumps {
        full.concat(b);
    }
    Ok(RowGeometry {
        master_slab,
        master_bumps,
        master_params,
        opposing_slab,
        opposing_bumps,
        opposing_params,
        curvature,
        full,
    })
}

fn round_to_f32(points: &mut [[f64; 3]]) {
    for p in points {
        for c in p {
            *c = *c as f32 as f64;
        }
    }
}

/// Rounds all coordinates to f32 precision, computes the ground-truth
/// grid from the rounded crown samples, and validates the result. Grids
/// are computed after rounding so reloading a sample reproduces them.
fn finalize_sample(
    mut context: Vec<[f64; 3]>,
    mut gt_points: Vec<[f64; 3]>,
    mut gt_normals: Vec<[f64; 3]>,
    mut gt_mesh: TriangleMesh,
    meta: SampleMeta,
) -> Result<ContextSample> {
    round_to_f32(&mut context);
    round_to_f32(&mut gt_points);
    round_to_f32(&mut gt_normals);
    round_to_f32(&mut gt_mesh.vertices);
    let oriented = OrientedPointCloud::new(gt_points.clone(), gt_normals.clone())?;
    let dpsr_cfg = DpsrConfig { resolution: meta.grid_resolution, sigma: meta.dpsr_sigma };
    let gt_grid = dpsr_forward(&oriented, &dpsr_cfg)?;
    let sample = ContextSample {
        context: PointCloud::new(context),
        gt_points: PointCloud::new(gt_points),
        gt_normals,
        gt_mesh,
        gt_grid,
        meta,
    };
    sample.validate()?;
    Ok(sample)
}

/// Generates one sample: builds a row, removes an inner bump (the
/// crown), plants the prepared stub, samples the context cloud from the
/// surrounding geometry, and samples + grids the crown ground truth.
pub fn make_sample(cfg: &GenConfig, rng: &mut Rng) -> Result<ContextSample> {
    let row = generate_shape(cfg, rng)?;
    let slot = 1 + rng.below(cfg.n_bumps - 2);
    let crown = &row.master_params[slot];
    let stub = BumpParams {
        center: crown.center,
        semi: [
            STUB_LATERAL_SCALE * crown.semi[0],
            STUB_LATERAL_SCALE * crown.semi[1],
            STUB_HEIGHT_SCALE * crown.semi[2],
        ],
        exponents: crown.exponents,
    };

    // The three opposing bumps closest to the removed one.
    let mut order: Vec<usize> = (0..cfg.n_bumps).collect();
    order.sort_by(|&a, &b| {
        let da = vec3::dist_sq(row.opposing_params[a].center, crown.center);
        let db = vec3::dist_sq(row.opposing_params[b].center, crown.center);
        da.total_cmp(&db).then(a.cmp(&b))
    });

    let mut context_mesh = row.master_slab.clone();
    context_mesh.concat(&row.master_bumps[slot - 1]);
    context_mesh.concat(&row.master_bumps[slot + 1]);
    context_mesh.concat(&stub.mesh());
    let mut opposing: Vec<usize> = order[..3].to_vec();
    opposing.sort_unstable();
    for &idx in &opposing {
        context_mesh.concat(&row.opposing_bumps[idx]);
    }
    context_mesh.concat(&row.opposing_slab);

    let mut context = sample_mesh_surface(&context_mesh, CONTEXT_POINTS, rng)?.points;
    for p in &mut context {
        for c in p.iter_mut() {
            *c += rng.uniform(-cfg.noise_sigma, cfg.noise_sigma);
        }
    }
    let gt_mesh = row.master_bumps[slot].clone();
    let gt = sample_mesh_surface(&gt_mesh, GT_POINTS, rng)?;

    let meta = SampleMeta {
        base_seed: 0,
        aug_index: 0,
        removed_slot: slot,
        n_bumps: cfg.n_bumps,
        curvature: row.curvature,
        noise_sigma: cfg.noise_sigma,
        grid_resolution: cfg.grid_resolution,
        dpsr_sigma: cfg.dpsr_sigma,
        grid_source: GRID_SOURCE.to_string(),
    };
    finalize_sample(context, gt.points, gt.normals, gt_mesh, meta)
}

/// Rodrigues rotation matrix about `axis` (unit) by `angle`.
fn rotation_matrix(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn mat_apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Applies `p ↦ center + scale·R·(p − center) + t` to every coordinate
/// of the sample (normals rotate only) and re-finalizes, which rounds
/// to f32 and recomputes the ground-truth grid.
fn apply_transform(
    sample: &ContextSample,
    rot: &[[f64; 3]; 3],
    scale: f64,
    t: [f64; 3],
) -> Result<ContextSample> {
    let center = [0.5, 0.5, 0.5];
    let warp = |p: &[f64; 3]| vec3::add(vec3::add(mat_apply(rot, vec3::sub(*p, center)).map(|c| c * scale), center), t);
    let context: Vec<[f64; 3]> = sample.context.points.iter().map(warp).collect();
    let gt_points: Vec<[f64; 3]> = sample.gt_points.points.iter().map(warp).collect();
    let gt_normals: Vec<[f64; 3]> = sample.gt_normals.iter().map(|n| mat_apply(rot, *n)).collect();
    let mut gt_mesh = sample.gt_mesh.clone();
    for v in &mut gt_mesh.vertices {
        *v = warp(v);
    }
    finalize_sample(context, gt_points, gt_normals, gt_mesh, sample.meta.clone())
}

fn transformed_bbox(sample: &ContextSample, rot: &[[f64; 3]; 3], scale: f64) -> ([f64; 3], [f64; 3]) {
    let center = [0.5, 0.5, 0.5];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let all = sample
        .context
        .points
        .iter()
        .chain(&sample.gt_points.points)
        .chain(&sample.gt_mesh.vertices);
    for p in all {
        let q = vec3::add(mat_apply(rot, vec3::sub(*p, center)).map(|c| c * scale), center);
        for d in 0..3 {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
    }
    (lo, hi)
}

/// Draws one rotation (any axis, within ±20°), uniform scale (0.9–1.1),
/// and a translation keeping everything inside the margin box, then
/// applies the same transform to context and ground truth alike.
/// Retries with fresh draws when no feasible translation exists.
pub fn augment(sample: &ContextSample, rng: &mut Rng) -> Result<ContextSample> {
    sample.validate()?;
    for _ in 0..AUG_MAX_RETRIES {
        let axis = rng.unit_vector();
        let angle = rng.uniform(-AUG_MAX_ANGLE, AUG_MAX_ANGLE);
        let scale = rng.uniform(AUG_SCALE.0, AUG_SCALE.1);
        let rot = rotation_matrix(axis, angle);
        let (lo, hi) = transformed_bbox(sample, &rot, scale);
        let mut t = [0.0; 3];
        let mut feasible = true;
        for d in 0..3 {
            let t_lo = DOMAIN_MARGIN - lo[d];
            let t_hi = (1.0 - DOMAIN_MARGIN) - hi[d];
            if t_lo > t_hi {
                feasible = false;
                break;
            }
            t[d] = rng.uniform(t_lo, t_hi);
        }
        if feasible {
            return apply_transform(sample, &rot, scale, t);
        }
    }
    Err(Error::invalid(format!(
        "no placement found within {AUG_MAX_RETRIES} augmentation attempts"
    )))
}

/// Dataset split names, in build order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split: {other}"))),
        }
    }
}

/// One manifest row: a split and the sample directory relative to the
/// dataset root.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub dir: String,
}

/// The dataset index, in build order.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{}", e.split.name(), e.dir);
        }
        s
    }

    fn from_text(text: &str) -> Result<Manifest> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (split, dir) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse_at_line(i + 1, "expected split<TAB>dir"))?;
            entries.push(ManifestEntry { split: Split::parse(split)?, dir: dir.to_string() });
        }
        Ok(Manifest { entries })
    }
}

/// Writes one sample directory (`context.ply`, `gt_points.ply`,
/// `gt_mesh.obj`, `gt_grid.dmcg`, `meta.txt`).
pub fn save_sample(dir: &Path, sample: &ContextSample) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::write_cloud(&dir.join("context.ply"), &sample.context.points, None)?;
    io::write_cloud(
        &dir.join("gt_points.ply"),
        &sample.gt_points.points,
        Some(&sample.gt_normals),
    )?;
    io::write_mesh(&dir.join("gt_mesh.obj"), &sample.gt_mesh)?;
    io::write_grid(&dir.join("gt_grid.dmcg"), &sample.gt_grid)?;
    fs::write(dir.join("meta.txt"), sample.meta.to_kv())?;
    Ok(())
}

/// Reads a sample directory written by [`save_sample`] and revalidates
/// its invariants.
pub fn load_sample(dir: &Path) -> Result<ContextSample> {
    let (context, _) = io::read_cloud(&dir.join("context.ply"))?;
    let (gt_points, gt_normals) = io::read_cloud(&dir.join("gt_points.ply"))?;
    let gt_normals = gt_normals
        .ok_or_else(|| Error::invalid(format!("{}: gt_points.ply lacks normals", dir.display())))?;
    let gt_mesh = io::read_mesh(&dir.join("gt_mesh.obj"))?;
    let gt_grid = io::read_grid(&dir.join("gt_grid.dmcg"))?;
    let meta = SampleMeta::from_kv(&fs::read_to_string(dir.join("meta.txt"))?)?;
    let sample = ContextSample { context, gt_points, gt_normals, gt_mesh, gt_grid, meta };
    sample.validate()?;
    Ok(sample)
}

/// Generates and persists all splits under `root`. Training bases get
/// `aug_factor` augmented copies each; val/test stay unaugmented. Base
/// seeds are forked per split, so no base shape straddles splits, and
/// the whole build is deterministic: same config, same bytes.
pub fn build_dataset(cfg: &GenConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(root)?;
    let root_rng = Rng::new(cfg.seed);
    let mut entries = Vec::new();
    let split_sizes = [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)];
    for (si, &(split, count)) in split_sizes.iter().enumerate() {
        let split_rng = root_rng.fork(si as u64);
        let aug = if split == Split::Train { cfg.aug_factor } else { 0 };
        for b in 0..count {
            let base_rng = split_rng.fork(b as u64);
            let mut gen_rng = base_rng.fork(0);
            let mut base = make_sample(cfg, &mut gen_rng)?;
            base.meta.base_seed = base_rng.state().0;
            let mut save = |sample: &ContextSample, a: usize| -> Result<()> {
                let dir = format!("{}/b{:04}a{:02}", split.name(), b, a);
                save_sample(&root.join(&dir), sample)?;
                entries.push(ManifestEntry { split, dir });
                Ok(())
            };
            save(&base, 0)?;
            for a in 1..=aug {
                let mut aug_rng = base_rng.fork(a as u64);
                let mut copy = augment(&base, &mut aug_rng)?;
                copy.meta.aug_index = a;
                save(&copy, a)?;
            }
        }
    }
    let manifest = Manifest { entries };
    fs::write(root.join("manifest.txt"), manifest.to_text())?;
    Ok(manifest)
}

/// Reads `manifest.txt` under a dataset root.
pub fn read_manifest(root: &Path) -> Result<Manifest> {
    Manifest::from_text(&fs::read_to_string(root.join("manifest.txt"))?)
}

/// Loads every sample of one split, in manifest order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<ContextSample>> {
    read_manifest(root)?
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_sample(&root.join(&e.dir)))
        .collect()
}

/// Absolute sample directories of one split, in manifest order.
pub fn split_dirs(root: &Path, split: Split) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(root)?
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| root.join(&e.dir))
        .collect())
}
