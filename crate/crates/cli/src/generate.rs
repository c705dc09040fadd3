use std::path::Path;

use anyhow::{Context, Result};
use ocfl_core::datagen::{export_manifest, generate, DatasetManifest};

use crate::config::ExperimentConfig;
use crate::output::seed_dir;

/// Writes one dataset per seed into `<out>/seed-<s>/` and returns the manifests.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<DatasetManifest>> {
    cfg.seeds
        .iter()
        .map(|&s| {
            let fd = generate(&cfg.data, &cfg.features, s).with_context(|| format!("seed {s}: generating data"))?;
            let dir = seed_dir(out, s);
            let m = export_manifest(&fd, &cfg.data, &cfg.features, s, &dir).with_context(|| format!("seed {s}: writing {}", dir.display()))?;
            println!("seed {s}: cluster sizes {:?} -> {}", fd.ground_truth.sizes(), dir.display());
            Ok(m)
        })
        .collect()
}
