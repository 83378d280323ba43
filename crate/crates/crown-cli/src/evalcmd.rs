//! `crown eval` — compare a prediction against a reference. Meshes are
//! sampled to points first; clouds are used as stored.

use std::path::Path;

use crate::cfgfile::{pick, FileConfig};
use crate::EvalArgs;
use crown_core::dpsr::{dpsr_forward, DpsrConfig, IndicatorGrid};
use crown_core::geom::io::{read_mesh, read_ply};
use crown_core::geom::rng::Rng;
use crown_core::geom::sampling::sample_mesh_surface;
use crown_core::geom::{vec3, OrientedPointCloud, PointCloud, TriangleMesh};
use crown_core::metrics::{evaluate_clouds, MetricReport};
use crown_core::{Error, Result};

/// Points drawn from each mesh input.
pub const MESH_EVAL_SAMPLES: usize = 4_096;
/// Both sides sample with the same seed, so identical inputs compare
/// exactly equal.
const MESH_SAMPLE_SEED: u64 = 11;
/// Grid for the reconstruction-error column, derived whenever both
/// inputs are oriented and live inside the unit cube.
pub const EVAL_GRID: DpsrConfig = DpsrConfig { resolution: 64, sigma: 2.0 };

struct Shape {
    points: Vec<[f64; 3]>,
    normals: Option<Vec<[f64; 3]>>,
}

fn load_shape(path: &Path) -> Result<Shape> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "obj" => mesh_to_shape(read_mesh(path)?),
        "ply" => {
            let ply = read_ply(path)?;
            match ply.faces {
                Some(faces) if !faces.is_empty() => {
                    mesh_to_shape(TriangleMesh::new(ply.points, faces)?)
                }
                _ => Ok(Shape { points: ply.points, normals: ply.normals }),
            }
        }
        other => Err(Error::invalid(format!(
            "unsupported input extension {other:?} (expected .obj or .ply)"
        ))),
    }
}

fn mesh_to_shape(mesh: TriangleMesh) -> Result<Shape> {
    let sampled = sample_mesh_surface(&mesh, MESH_EVAL_SAMPLES, &mut Rng::new(MESH_SAMPLE_SEED))?;
    Ok(Shape { points: sampled.points, normals: Some(sampled.normals) })
}

/// A reconstruction grid for the shape, when one is derivable: needs
/// usable normals and points inside the grid's unit domain.
fn derived_grid(shape: &Shape) -> Result<Option<IndicatorGrid>> {
    let Some(normals) = &shape.normals else {
        return Ok(None);
    };
    let inside = shape
        .points
        .iter()
        .all(|p| p.iter().all(|&c| (0.0..=1.0).contains(&c)));
    if !inside {
        return Ok(None);
    }
    let mut unit = Vec::with_capacity(normals.len());
    for &n in normals {
        match vec3::normalized(n, 1e-9) {
            Some(u) => unit.push(u),
            None => return Ok(None),
        }
    }
    let oriented = OrientedPointCloud::new(shape.points.clone(), unit)?;
    Ok(Some(dpsr_forward(&oriented, &EVAL_GRID)?))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let tau = pick(args.tau, file.take("tau")?, 0.3);
    file.finish()?;

    let pred = load_shape(&args.pred)?;
    let gt = load_shape(&args.gt)?;
    let grids = match (derived_grid(&pred)?, derived_grid(&gt)?) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let report = evaluate_clouds(
        &PointCloud::new(pred.points),
        &PointCloud::new(gt.points),
        tau,
        grids.as_ref().map(|(a, b)| (a, b)),
    )?;
    let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.to_csv_row());
    std::fs::write(&args.out, &csv)?;
    print!("{}", report.to_kv());
    println!("wrote metrics to {}", args.out.display());
    Ok(())
}
