//! `crown ablate` — train the objective variants and write the
//! comparison table. The validation split plays no role here: each
//! variant is evaluated at its final epoch on the test split.

use crate::cfgfile::{pick, FileConfig};
use crate::AblateArgs;
use crown_core::data::{load_split, Split};
use crown_core::dpsr::DpsrConfig;
use crown_core::train::{run_ablation, AblateConfig, AblationMethod};
use crown_core::{Error, Result};

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let d = AblateConfig::default();
    let n_seeds = pick(args.seeds, file.take("seeds")?, d.seeds.len());
    if n_seeds == 0 {
        return Err(Error::invalid("--seeds must be at least 1"));
    }
    let epochs = pick(None, file.take("epochs")?, d.epochs);
    let batch_size = pick(None, file.take("batch")?, d.batch_size);
    let learning_rate = pick(None, file.take("lr")?, d.learning_rate);
    let tau = pick(None, file.take("tau")?, d.tau);
    let mesh_points = pick(None, file.take("mesh-points")?, d.mesh_points);
    file.finish()?;

    let train_set = load_split(&args.data, Split::Train)?;
    let test_set = load_split(&args.data, Split::Test)?;
    if train_set.is_empty() {
        return Err(Error::invalid("dataset has no training samples"));
    }
    let meta = &train_set[0].meta;
    let cfg = AblateConfig {
        dpsr: DpsrConfig { resolution: meta.grid_resolution, sigma: meta.dpsr_sigma },
        seeds: (1..=n_seeds as u64).collect(),
        epochs,
        batch_size,
        learning_rate,
        tau,
        mesh_points,
        ..d
    };
    let table = run_ablation(&train_set, &test_set, &AblationMethod::ALL, &cfg)?;
    let csv = table.to_csv();
    std::fs::write(&args.out, &csv)?;
    print!("{csv}");
    println!("wrote comparison table to {}", args.out.display());
    Ok(())
}
