//! `crown complete` — run the trained network on a context cloud and
//! mesh the predicted crown.

use crate::cfgfile::{pick, FileConfig};
use crate::frame::Frame;
use crate::CompleteArgs;
use crown_core::data::CONTEXT_POINTS;
use crown_core::dpsr::{dpsr_forward, DpsrConfig};
use crown_core::geom::io::{read_cloud, write_cloud, write_mesh};
use crown_core::geom::rng::Rng;
use crown_core::geom::sampling::fps_subsample;
use crown_core::geom::{OrientedPointCloud, PointCloud};
use crown_core::iso::{marching_cubes, McConfig};
use crown_core::loss::wrap_unit;
use crown_core::net::CompletionModel;
use crown_core::{Error, Result};

/// Seed for the farthest-point pass when an oversized context needs
/// thinning; fixed so repeated runs give identical output.
const RESAMPLE_SEED: u64 = 0x5eed;

pub fn cmd_complete(args: &CompleteArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let resolution = pick(args.resolution, file.take("resolution")?, 128);
    let sigma = pick(None, file.take("sigma")?, 2.0);
    file.finish()?;

    let model = CompletionModel::load_checkpoint(&args.model)?;
    let (cloud, _) = read_cloud(&args.context)?;
    let cloud = resize_context(cloud)?;
    let frame = Frame::fit(&cloud.points);
    if !frame.is_identity() {
        eprintln!(
            "warning: context leaves the unit cube; working in a scaled copy and mapping results back"
        );
    }
    let working = PointCloud::new(frame.map_points(&cloud.points));
    let (outputs, _) = model.forward_full(&working)?;
    let oriented = OrientedPointCloud::new(
        wrap_unit(&outputs.oriented.points),
        outputs.oriented.normals.clone(),
    )?;
    let grid = dpsr_forward(&oriented, &DpsrConfig { resolution, sigma })?;
    let mut mesh = marching_cubes(&grid, &McConfig::default())?;
    frame.unmap_mesh(&mut mesh);
    write_mesh(&args.out_mesh, &mesh)?;
    println!(
        "wrote completed mesh ({} vertices, {} faces) to {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        args.out_mesh.display()
    );
    if let Some(path) = &args.out_points {
        let points = frame.unmap_points(&outputs.oriented.points);
        write_cloud(path, &points, Some(&outputs.oriented.normals))?;
        println!("wrote {} oriented points to {}", points.len(), path.display());
    }
    Ok(())
}

/// The network expects exactly `CONTEXT_POINTS` inputs; anything else
/// is resampled with a warning — farthest-point thinning when
/// oversized, cyclic repetition when undersized.
fn resize_context(cloud: PointCloud) -> Result<PointCloud> {
    let n = cloud.len();
    if n == CONTEXT_POINTS {
        return Ok(cloud);
    }
    if n == 0 {
        return Err(Error::invalid("context cloud is empty"));
    }
    eprintln!("warning: context has {n} points; resampling to {CONTEXT_POINTS}");
    if n > CONTEXT_POINTS {
        let (thinned, _) = fps_subsample(&cloud, CONTEXT_POINTS, &mut Rng::new(RESAMPLE_SEED))?;
        Ok(thinned)
    } else {
        let mut points = Vec::with_capacity(CONTEXT_POINTS);
        for i in 0..CONTEXT_POINTS {
            points.push(cloud.points[i % n]);
        }
        Ok(PointCloud::new(points))
    }
}
