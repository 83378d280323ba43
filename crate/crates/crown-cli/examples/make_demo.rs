//! Builds the committed demo assets: a context cloud and a checkpoint
//! trained far enough that completing that context meshes cleanly.
//!
//! Run from the workspace root:
//!
//! ```text
//! cargo run --release -p crown-cli --example make_demo
//! ```
//!
//! Writes `demo/context.ply` and `demo/model.ckpt`, then replays the
//! exact `crown complete` pipeline on the written files and refuses to
//! finish unless the result is a closed manifold mesh with no
//! degenerate triangles.

use std::path::Path;
use std::process::ExitCode;

use crown_core::data::{make_sample, GenConfig};
use crown_core::dpsr::{dpsr_forward, DpsrConfig};
use crown_core::geom::io::{read_cloud, write_cloud};
use crown_core::geom::rng::Rng;
use crown_core::geom::OrientedPointCloud;
use crown_core::iso::{marching_cubes, mesh_checks, McConfig};
use crown_core::loss::{wrap_unit, LossConfig};
use crown_core::net::ModelConfig;
use crown_core::train::{train, TrainConfig};

const DEMO_SEED: u64 = 2026;
const TRAIN_SAMPLES: usize = 8;
const EPOCHS: usize = 60;
/// Grid used when verifying the completion (matches the acceptance
/// invocation of `crown complete --resolution 64`).
const VERIFY_DPSR: DpsrConfig = DpsrConfig { resolution: 64, sigma: 2.0 };

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> crown_core::Result<()> {
    let demo_dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .and_then(Path::parent)
        .expect("workspace root")
        .join("demo");
    std::fs::create_dir_all(&demo_dir)?;

    let gen = GenConfig { grid_resolution: 32, ..GenConfig::default() };
    let mut rng = Rng::new(DEMO_SEED);
    let samples: Vec<_> = (0..TRAIN_SAMPLES)
        .map(|_| make_sample(&gen, &mut rng))
        .collect::<crown_core::Result<_>>()?;

    let model_cfg = ModelConfig {
        n_groups: 32,
        knn_k: 8,
        feat_dim: 32,
        n_heads: 2,
        n_enc_blocks: 1,
        n_dec_blocks: 1,
        n_coarse: 32,
        fold_grid: 4,
        densify_k: 2,
    };
    let train_cfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 4,
        epochs: EPOCHS,
        eval_every: EPOCHS + 1,
        seed: DEMO_SEED,
        checkpoint_dir: None,
        ..TrainConfig::default()
    };
    eprintln!("training {EPOCHS} epochs on {TRAIN_SAMPLES} samples...");
    let outcome = train(
        &samples,
        &[],
        &model_cfg,
        &DpsrConfig { resolution: gen.grid_resolution, sigma: gen.dpsr_sigma },
        &LossConfig::default(),
        &train_cfg,
    )?;
    if let Some(row) = outcome.history.last() {
        eprintln!("final epoch mean loss {:.4e}", row.loss);
    }

    let ckpt_path = demo_dir.join("model.ckpt");
    let cloud_path = demo_dir.join("context.ply");
    outcome.state.model.save_checkpoint(&ckpt_path)?;
    write_cloud(&cloud_path, &samples[0].context.points, None)?;

    // Verify against the files as written (the cloud stores f32), using
    // the same steps `crown complete` runs on them.
    let (context, _) = read_cloud(&cloud_path)?;
    let (outputs, _) = outcome.state.model.forward_full(&context)?;
    let oriented = OrientedPointCloud::new(
        wrap_unit(&outputs.oriented.points),
        outputs.oriented.normals,
    )?;
    let chi = dpsr_forward(&oriented, &VERIFY_DPSR)?;
    let mesh = marching_cubes(&chi, &McConfig::default())?;
    let report = mesh_checks(&mesh);
    eprintln!(
        "completion mesh: {} vertices, {} faces",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    eprintln!("{}", report.to_kv());
    if !(report.closed && report.manifold && report.min_triangle_area > 0.0) {
        return Err(crown_core::Error::invalid(
            "demo completion does not mesh cleanly; adjust the training recipe",
        ));
    }
    eprintln!("wrote {} and {}", ckpt_path.display(), cloud_path.display());
    Ok(())
}
