use std::path::Path;

use anyhow::{bail, Context, Result};
use ocfl_core::datagen::load_manifest;
use ocfl_core::model::Mlp;
use ocfl_core::xai::{run_inde, IndeMode, IndeResult};
use ocfl_core::Exec;
use serde::{Deserialize, Serialize};

use crate::config::InDeSettings;
use crate::output::*;

/// Outcome of one mode; exactly one of `result` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeBlock {
    pub mode: IndeMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<IndeResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndeFile {
    pub seed: u64,
    pub settings: InDeSettings,
    pub modes: Vec<ModeBlock>,
}

/// Evaluates the final cluster models of one seed directory and writes
/// `inde.json`. A mode that cannot be evaluated is recorded as an error
/// block; the other modes still run.
pub fn evaluate_seed(dir: &Path, seed: u64, settings: &InDeSettings, exec: Exec) -> Result<IndeFile> {
    let partitions: PartitionFile = read_json(&dir.join(PARTITION_JSON))?;
    let partition = partitions.final_partition;
    let models = (0..partition.k())
        .map(|j| {
            let p = model_file(dir, j);
            if !p.exists() {
                bail!("missing checkpoint {}", p.display());
            }
            Mlp::load_json(&p).with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (_, fd) = load_manifest(&dir.join(DATA_DIR)).with_context(|| format!("loading data of {}", dir.display()))?;

    let modes = settings
        .modes
        .iter()
        .map(|&mode| match run_inde(&partition, &models, &fd, &settings.for_mode(mode, exec), seed) {
            Ok(r) => ModeBlock { mode, result: Some(r), error: None },
            Err(e) => {
                log::warn!("seed {seed}, mode {mode:?}: {e}");
                ModeBlock { mode, result: None, error: Some(e.to_string()) }
            }
        })
        .collect();
    let file = IndeFile { seed, settings: settings.clone(), modes };
    write_json(&dir.join(INDE_JSON), &file)?;

    let manifest_path = dir.join(RUN_MANIFEST);
    if manifest_path.exists() {
        let mut m: RunManifest = read_json(&manifest_path)?;
        m.record_output(dir, INDE_JSON)?;
        write_json(&manifest_path, &m)?;
    }
    Ok(file)
}

/// Runs the evaluation for `seeds` (every seed directory when empty).
pub fn cmd_xai(run: &Path, settings: &InDeSettings, seeds: &[u64], parallel_seeds: bool) -> Result<Vec<(u64, Result<IndeFile>)>> {
    let seeds = if seeds.is_empty() { list_seeds(run)? } else { seeds.to_vec() };
    if seeds.is_empty() {
        bail!("no seed directories in {}", run.display());
    }
    let fan = if parallel_seeds { Exec::Parallel } else { Exec::Sequential };
    Ok(fan.map(seeds.len(), |i| {
        let s = seeds[i];
        (s, evaluate_seed(&seed_dir(run, s), s, settings, Exec::default()))
    }))
}
