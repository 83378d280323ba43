//! `crown recon` — mesh an oriented point cloud directly, no network.

use crate::cfgfile::{pick, FileConfig};
use crate::frame::Frame;
use crate::ReconArgs;
use crown_core::dpsr::{dpsr_forward, DpsrConfig};
use crown_core::geom::io::{read_cloud, write_mesh};
use crown_core::geom::{vec3, OrientedPointCloud};
use crown_core::iso::{marching_cubes, McConfig};
use crown_core::{Error, Result};

pub fn cmd_recon(args: &ReconArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let resolution = pick(args.resolution, file.take("resolution")?, 128);
    let sigma = pick(args.sigma, file.take("sigma")?, 2.0);
    file.finish()?;

    let (cloud, normals) = read_cloud(&args.points)?;
    let Some(normals) = normals else {
        return Err(Error::invalid("oriented points required"));
    };
    let normals = renormalize(&normals)?;
    let frame = Frame::fit(&cloud.points);
    if !frame.is_identity() {
        eprintln!(
            "warning: points leave the unit cube; working in a scaled copy and mapping results back"
        );
    }
    let oriented = OrientedPointCloud::new(frame.map_points(&cloud.points), normals)?;
    let grid = dpsr_forward(&oriented, &DpsrConfig { resolution, sigma })?;
    let mut mesh = marching_cubes(&grid, &McConfig::default())?;
    frame.unmap_mesh(&mut mesh);
    write_mesh(&args.out_mesh, &mesh)?;
    println!(
        "wrote reconstructed mesh ({} vertices, {} faces) to {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        args.out_mesh.display()
    );
    Ok(())
}

/// Stored normals are accepted at any nonzero length and brought back
/// to unit length here.
fn renormalize(normals: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    normals
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            vec3::normalized(n, 1e-9)
                .ok_or_else(|| Error::invalid(format!("zero-length normal at point {i}")))
        })
        .collect()
}
