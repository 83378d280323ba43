//! `crown train` — fit the completion network on a generated dataset.
//!
//! The reconstruction-grid settings follow the dataset's own
//! ground-truth grids, so the grid term compares like with like.

use crate::cfgfile::{pick, FileConfig};
use crate::lock::DirLock;
use crate::TrainArgs;
use crown_core::data::{load_split, Split};
use crown_core::dpsr::DpsrConfig;
use crown_core::loss::LossConfig;
use crown_core::net::ModelConfig;
use crown_core::train::{train, TrainConfig};
use crown_core::{Error, Result};

/// Model parameters at the last epoch, alongside the best-validation
/// checkpoint the loop itself maintains.
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let desk = TrainConfig::desk();
    let cfg = TrainConfig {
        learning_rate: pick(args.lr, file.take("lr")?, desk.learning_rate),
        batch_size: pick(args.batch, file.take("batch")?, desk.batch_size),
        epochs: pick(args.epochs, file.take("epochs")?, desk.epochs),
        seed: pick(args.seed, file.take("seed")?, desk.seed),
        eval_every: pick(None, file.take("eval-every")?, desk.eval_every),
        checkpoint_dir: Some(args.out.clone()),
        ..desk
    };
    let use_mse = !(args.no_mse || file.take("no-mse")?.unwrap_or(false));
    let loss_cfg = LossConfig { use_mse, ..LossConfig::default() };
    file.finish()?;

    let train_set = load_split(&args.data, Split::Train)?;
    let val_set = load_split(&args.data, Split::Val)?;
    if train_set.is_empty() {
        return Err(Error::invalid("dataset has no training samples"));
    }
    let meta = &train_set[0].meta;
    let dpsr_cfg = DpsrConfig { resolution: meta.grid_resolution, sigma: meta.dpsr_sigma };

    let _lock = DirLock::acquire(&args.out)?;
    let outcome = train(
        &train_set,
        &val_set,
        &ModelConfig::default(),
        &dpsr_cfg,
        &loss_cfg,
        &cfg,
    )?;
    outcome
        .state
        .model
        .save_checkpoint(&args.out.join(FINAL_CHECKPOINT))?;
    for row in &outcome.history {
        println!("{}", row.to_csv_row());
    }
    match outcome.state.best {
        Some(b) => println!("best validation cd_l2 {:.6e} at epoch {}", b.cd_l2, b.epoch),
        None => println!("no validation samples; best checkpoint not tracked"),
    }
    println!("wrote checkpoints and history to {}", args.out.display());
    Ok(())
}
