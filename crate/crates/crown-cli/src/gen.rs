//! `crown gen` — build a synthetic dataset on disk.

use crate::cfgfile::{pick, FileConfig};
use crate::lock::DirLock;
use crate::GenArgs;
use crown_core::data::{build_dataset, GenConfig, Split};
use crown_core::{Error, Result};

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut file = FileConfig::load(args.config.as_deref())?;
    let d = GenConfig::default();
    let cfg = GenConfig {
        train: pick(args.train, file.take("train")?, d.train),
        val: pick(args.val, file.take("val")?, d.val),
        test: pick(args.test, file.take("test")?, d.test),
        seed: pick(args.seed, file.take("seed")?, d.seed),
        aug_factor: pick(args.aug_factor, file.take("aug-factor")?, d.aug_factor),
        grid_resolution: pick(None, file.take("grid-resolution")?, d.grid_resolution),
        dpsr_sigma: pick(None, file.take("sigma")?, d.dpsr_sigma),
        ..d
    };
    file.finish()?;

    if args.out.is_dir() && args.out.read_dir()?.next().is_some() {
        if !args.force {
            return Err(Error::invalid(format!(
                "output directory {} is not empty (pass --force to replace it)",
                args.out.display()
            )));
        }
        std::fs::remove_dir_all(&args.out)?;
    }
    let _lock = DirLock::acquire(&args.out)?;
    let manifest = build_dataset(&cfg, &args.out)?;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        args.out.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(())
}
